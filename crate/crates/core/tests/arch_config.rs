use qmix_core::arch::{self, parse_arch, ArchSpec, ModuleKind, Source, SurgeryPlan};
use qmix_core::zoo::{Layer, LayerSpec, VariantKind};
use qmix_core::{Error, Tensor};

fn nano() -> arch::ModelGraph {
    let spec = arch::resolve_scaling(&ArchSpec::yolov8(), "n").unwrap();
    arch::build_model(&spec, 10, 0).unwrap()
}

#[test]
fn minimal_two_row_config() {
    let spec = parse_arch("backbone:\n  - [-1, 1, Conv, [16, 3, 2]]\n  - [-1, 1, C2f, [16, True]]\n").unwrap();
    assert_eq!(spec.rows.len(), 2);
    assert_eq!(spec.rows[1].kind, ModuleKind::C2f);
    assert_eq!(spec.nc, 10);
}

#[test]
fn forward_reference_reports_its_line() {
    let mut text = String::from("# header\nbackbone:\n");
    for _ in 0..22 {
        text.push_str("  - [-1, 1, Conv, [16, 3, 1]]\n");
    }
    text.push_str("  - [[-1, 99], 1, Concat, [1]]\n");
    match parse_arch(&text).unwrap_err() {
        Error::Parse { line, msg } => {
            assert_eq!(line, 25);
            assert!(msg.contains("forward reference"), "{msg}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn unknown_kind_and_malformed_rows() {
    let err = parse_arch("backbone:\n  - [-1, 1, Bogus, [16]]\n").unwrap_err();
    assert!(matches!(&err, Error::Parse { line: 2, msg } if msg.contains("unknown module kind")));
    for bad in [
        "backbone:\n  - [-1, 1, Conv]\n",
        "backbone:\n  - [-1, 0, Conv, [16]]\n",
        "backbone:\n  - [-1, 1, Conv, [16, 3, 2]\n",
        "backbone:\n  - [-2, 1, Conv, [16]]\n",
        "backbone:\n  - [-1, 2, Conv, [16]]\n",
        "  - [-1, 1, Conv, [16]]\n",
        "stuff: 3\n",
    ] {
        assert!(matches!(parse_arch(bad), Err(Error::Parse { .. })), "{bad:?}");
    }
}

#[test]
fn bundled_reference_file() {
    let spec = ArchSpec::yolov8();
    assert_eq!(spec.rows.len(), 23);
    let detect = &spec.rows[22];
    assert_eq!(detect.kind, ModuleKind::Detect);
    assert_eq!(detect.from, Source::Many(vec![15, 18, 21]));
    assert_eq!(spec.rows[9].kind, ModuleKind::Sppf);
    assert_eq!(spec.scales["n"].width, 0.25);
    assert_eq!(spec.scales["s"].max_channels, 1024);
}

#[test]
fn parse_serialize_parse_is_stable() {
    let spec = ArchSpec::yolov8();
    let text = spec.to_text();
    let again = parse_arch(&text).unwrap();
    assert_eq!(again, spec);
    assert_eq!(again.to_text(), text);
}

#[test]
fn scaling_rule() {
    let base = ArchSpec::yolov8();
    let n = arch::resolve_scaling(&base, "n").unwrap();
    assert_eq!(n.rows[6].args[0].as_int(), Some(128));
    assert_eq!(n.rows[6].repeats, 2);
    assert_eq!(n.rows[8].args[0].as_int(), Some(256));
    let widths: Vec<i64> = [0, 1, 3, 5, 7]
        .iter()
        .map(|&i| n.rows[i].args[0].as_int().unwrap())
        .collect();
    assert_eq!(widths, vec![16, 32, 64, 128, 256]);
    let s = arch::resolve_scaling(&base, "s").unwrap();
    assert_eq!(s.rows[7].args[0].as_int(), Some(512));
    assert!(matches!(arch::resolve_scaling(&base, "q"), Err(Error::UnknownPreset(p)) if p == "q"));

    let mut ident = base.clone();
    ident.scales.insert(
        "id".into(),
        arch::Scale {
            depth: 1.0,
            width: 1.0,
            max_channels: 4096,
        },
    );
    assert_eq!(arch::resolve_scaling(&ident, "id").unwrap().rows, base.rows);
}

#[test]
fn reference_param_totals() {
    let n = nano();
    assert_eq!(n.param_count(), 3_012_798);
    let s = arch::build_model(&arch::resolve_scaling(&ArchSpec::yolov8(), "s").unwrap(), 10, 0).unwrap();
    assert_eq!(s.param_count(), 11_139_470);
    let one = arch::build_model(
        &parse_arch("backbone:\n  - [-1, 1, Conv, [16, 3, 2]]\n").unwrap(),
        10,
        0,
    )
    .unwrap();
    assert_eq!(one.param_count(), 464);
}

#[test]
fn nano_layer_counts_match_enumeration() {
    let g = nano();
    let want = [
        (0, 464),
        (1, 4672),
        (2, 7360),
        (3, 18560),
        (4, 49664),
        (5, 73984),
        (6, 197632),
        (7, 295424),
        (8, 460288),
        (9, 164608),
        (12, 148224),
        (15, 37248),
        (16, 36992),
        (18, 123648),
        (19, 147712),
        (21, 493056),
        (22, 753262),
    ];
    for (i, n) in want {
        assert_eq!(g.nodes[i].param_count(), n, "layer {i}");
    }
    assert_eq!(g.outputs, vec![15, 18, 21]);
}

#[test]
fn zero_image_forward_shapes_and_determinism() {
    let g = nano();
    let x = Tensor::zeros(&[1, 3, 64, 64]);
    let out = arch::forward_model(&g, &x).unwrap();
    let shapes: Vec<Vec<usize>> = out.iter().map(|t| t.shape().to_vec()).collect();
    assert_eq!(shapes, vec![vec![1, 74, 8, 8], vec![1, 74, 4, 4], vec![1, 74, 2, 2]]);
    assert!(out.iter().all(Tensor::is_finite));
    assert_eq!(arch::forward_model(&g, &x).unwrap(), out);
    assert!(arch::forward_model(&g, &Tensor::zeros(&[1, 3, 48, 64])).is_err());
}

#[test]
fn surgery_replaces_only_targets() {
    let base = nano();
    let cut = arch::apply_surgery(&base, &SurgeryPlan::final_design()).unwrap();
    for (a, b) in base.nodes.iter().zip(&cut.nodes) {
        assert_eq!(a.from, b.from);
        if a.index == 6 || a.index == 8 {
            assert!(matches!(b.layer, Layer::QMix(_)));
            continue;
        }
        let va: Vec<_> = a.params.iter().map(|p| p.value.clone()).collect();
        let vb: Vec<_> = b.params.iter().map(|p| p.value.clone()).collect();
        assert_eq!(va, vb, "layer {}", a.index);
    }
    let mixer = cut.mixer.as_ref().unwrap();
    assert_eq!(mixer.live, 64);
    assert_eq!(cut.qmix_nodes(), vec![6, 8]);
}

#[test]
fn surgery_leaves_earlier_activations_bit_identical() {
    let base = nano();
    let cut = arch::apply_surgery(&base, &SurgeryPlan::final_design()).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    let x = Tensor::randn(&[1, 3, 64, 64], &mut rng);
    let a = base.activations(&x, 5).unwrap();
    let b = cut.activations(&x, 5).unwrap();
    assert_eq!(a, b);
    let a7 = base.activations(&x, 7).unwrap();
    let b7 = cut.activations(&x, 7).unwrap();
    assert_ne!(a7[6], b7[6]);
}

#[test]
fn surgery_matches_building_qmix_rows_directly() {
    let mut spec = arch::resolve_scaling(&ArchSpec::yolov8(), "n").unwrap();
    for i in [6, 8] {
        let row = &mut spec.rows[i];
        row.kind = ModuleKind::QMix(VariantKind::QMixBlock);
        row.args.truncate(1);
        row.args.push(arch::ArgValue::Int(4));
    }
    let direct = arch::build_model(&spec, 10, 0).unwrap();
    let cut = arch::apply_surgery(&nano(), &SurgeryPlan::final_design()).unwrap();
    assert_eq!(direct.param_count(), cut.param_count());
    let x = Tensor::full(&[1, 3, 64, 64], 0.5);
    assert_eq!(direct.forward(&x).unwrap(), cut.forward(&x).unwrap());
}

#[test]
fn surgery_errors() {
    let base = nano();
    let not_c2f = arch::apply_surgery(&base, &SurgeryPlan::new([5]));
    assert!(matches!(not_c2f, Err(Error::Surgery { index: 5, .. })));
    let width_change = arch::apply_surgery(&base, &SurgeryPlan::new([12]));
    assert!(matches!(width_change, Err(Error::Surgery { index: 12, .. })));
    assert!(arch::apply_surgery(&base, &SurgeryPlan::new([40])).is_err());
    let odd = arch::apply_surgery(&base, &SurgeryPlan::final_design().with_ratio(3));
    assert!(matches!(odd, Err(Error::Divisibility { .. })));

    let wide = parse_arch("backbone:\n  - [-1, 1, Conv, [4096, 1, 1]]\n  - [-1, 1, C2f, [4096]]\n").unwrap();
    let wide = arch::build_model(&wide, 10, 0).unwrap();
    let over = arch::apply_surgery(&wide, &SurgeryPlan::new([1]).with_ratio(2));
    assert!(matches!(over, Err(Error::MixerCapacity { latent: 2048, .. })));
}

#[test]
fn empty_plan_is_a_no_op() {
    let base = nano();
    let same = arch::apply_surgery(&base, &SurgeryPlan::new([])).unwrap();
    assert_eq!(same.param_count(), base.param_count());
    assert!(same.mixer.is_none());
    let x = Tensor::full(&[1, 3, 32, 32], 0.25);
    assert_eq!(same.forward(&x).unwrap(), base.forward(&x).unwrap());
}

#[test]
fn v0_places_projected_blocks_on_one_mixer() {
    let cut = arch::apply_surgery(&nano(), &SurgeryPlan::v0()).unwrap();
    assert_eq!(cut.qmix_nodes(), vec![6, 8, 12, 18, 21]);
    let rec = cut.provenance.surgery.as_ref().unwrap();
    assert_eq!(rec.projected, vec![12, 18, 21]);
    assert_eq!(cut.mixer.as_ref().unwrap().live, 64);
    let out = cut.forward(&Tensor::zeros(&[1, 3, 64, 64])).unwrap();
    assert_eq!(out.len(), 3);
}

#[test]
fn full_variant_stacks_the_replaced_depth() {
    let cut = arch::apply_surgery(
        &nano(),
        &SurgeryPlan::final_design().with_variant(VariantKind::QMixFull),
    )
    .unwrap();
    let depth = |i: usize| match (&cut.nodes[i].layer, &cut.nodes[i].spec) {
        (Layer::QMix(q), LayerSpec::QMix { spatial_depth, .. }) => (q.spatial.len(), *spatial_depth),
        _ => unreachable!(),
    };
    assert_eq!(depth(6), (2, 2));
    assert_eq!(depth(8), (1, 1));
    assert_eq!(cut.param_count(), 3_281_726);
}

#[test]
fn plan_parsing() {
    assert_eq!(SurgeryPlan::parse("final").unwrap(), SurgeryPlan::final_design());
    assert_eq!(SurgeryPlan::parse("v0").unwrap(), SurgeryPlan::v0());
    assert_eq!(
        SurgeryPlan::parse("6, 8")
            .unwrap()
            .targets
            .into_iter()
            .collect::<Vec<_>>(),
        vec![6, 8]
    );
    assert!(SurgeryPlan::parse("6,x").is_err());
}

#[test]
fn graph_dump_fields() {
    let dump = nano().dump_json();
    let nodes = dump["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 23);
    let first = &nodes[0];
    for key in ["index", "kind", "from", "args_resolved", "channels_out", "param_count"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert_eq!(first["args_resolved"]["c2"], 16);
    assert_eq!(dump["total_params"], 3_012_798);
    let sum: u64 = nodes.iter().map(|n| n["param_count"].as_u64().unwrap()).sum();
    assert_eq!(sum, 3_012_798);
}
