//! Kernel checks against straight-loop oracles, finite differences and
//! algebraic invariants.

use proptest::prelude::*;
use qmix_core::gradcheck::{finite_diff_check, GradCheckConfig};
use qmix_core::ops::{self, Conv2dConfig, MaxPoolConfig};
use qmix_core::param::ParamStore;
use qmix_core::tape::Tape;
use qmix_core::{Error, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn conv_oracle(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (b, cin, h, wd) = x.dims4("oracle").unwrap();
    let (cout, _, k, _) = w.dims4("oracle").unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at4(n, ci, iy as usize, ix as usize) * w.at4(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    out[((n * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[b, cout, oh, ow], out).unwrap()
}

#[test]
fn conv_of_ones_sums_window() {
    let x = Tensor::full(&[1, 1, 3, 3], 1.0);
    let w = Tensor::full(&[1, 1, 3, 3], 1.0);
    let y = ops::conv2d(&x, &w, None, Conv2dConfig::new(1, 0)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.data(), &[9.0]);
}

#[test]
fn unit_pointwise_kernel_is_identity() {
    let x = Tensor::randn(&[2, 1, 5, 4], &mut rng(1));
    let w = Tensor::full(&[1, 1, 1, 1], 1.0);
    assert_eq!(ops::conv2d(&x, &w, None, Conv2dConfig::default()).unwrap(), x);
}

#[test]
fn strided_padded_conv_matches_loop_oracle() {
    let x = Tensor::randn(&[2, 4, 8, 8], &mut rng(2));
    let w = Tensor::randn(&[8, 4, 3, 3], &mut rng(3));
    let y = ops::conv2d(&x, &w, None, Conv2dConfig::new(2, 1)).unwrap();
    assert_eq!(y.shape(), &[2, 8, 4, 4]);
    assert!(y.max_abs_diff(&conv_oracle(&x, &w, 2, 1)) < 1e-12);
}

#[test]
fn grouped_conv_matches_per_group_oracle() {
    let x = Tensor::randn(&[1, 4, 5, 5], &mut rng(4));
    let w = Tensor::randn(&[6, 2, 3, 3], &mut rng(5));
    let cfg = Conv2dConfig {
        stride: 1,
        padding: 1,
        groups: 2,
    };
    let y = ops::conv2d(&x, &w, None, cfg).unwrap();
    for g in 0..2 {
        let xg = Tensor::new(&[1, 2, 5, 5], x.data()[g * 50..(g + 1) * 50].to_vec()).unwrap();
        let wg = Tensor::new(&[3, 2, 3, 3], w.data()[g * 54..(g + 1) * 54].to_vec()).unwrap();
        let want = conv_oracle(&xg, &wg, 1, 1);
        let got = &y.data()[g * 75..(g + 1) * 75];
        for (a, b) in got.iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_shape_errors_name_the_dimension() {
    let x = Tensor::zeros(&[1, 3, 4, 4]);
    let w = Tensor::zeros(&[2, 4, 3, 3]);
    let err = ops::conv2d(&x, &w, None, Conv2dConfig::default()).unwrap_err();
    match err {
        Error::Shape { dim, expected, got, .. } => {
            assert_eq!(dim, "weight input channels");
            assert_eq!((expected, got), (3, 4));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn gap_of_constant_and_small_example() {
    let c = Tensor::full(&[2, 3, 4, 5], 3.5);
    assert!(ops::global_avg_pool(&c).unwrap().data().iter().all(|&v| v == 3.5));
    let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(ops::global_avg_pool(&x).unwrap().data(), &[2.5]);
}

#[test]
fn gap_matches_loop_oracle() {
    let x = Tensor::randn(&[4, 16, 10, 10], &mut rng(6));
    let g = ops::global_avg_pool(&x).unwrap();
    for b in 0..4 {
        for c in 0..16 {
            let mut s = 0.0;
            for i in 0..10 {
                for j in 0..10 {
                    s += x.at4(b, c, i, j);
                }
            }
            assert!((g.data()[b * 16 + c] - s / 100.0).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_examples() {
    let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
    let w = Tensor::new(&[2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
    assert_eq!(ops::linear(&x, &w, None).unwrap().data(), &[3.0, 2.0]);

    let xr = Tensor::randn(&[3, 5], &mut rng(7));
    let mut eye = Tensor::zeros(&[5, 5]);
    (0..5).for_each(|i| eye.data_mut()[i * 6] = 1.0);
    assert_eq!(ops::linear(&xr, &eye, None).unwrap(), xr);
}

#[test]
fn linear_matches_triple_loop() {
    let x = Tensor::randn(&[8, 64], &mut rng(8));
    let w = Tensor::randn(&[16, 64], &mut rng(9));
    let y = ops::linear(&x, &w, None).unwrap();
    for b in 0..8 {
        for m in 0..16 {
            let mut s = 0.0;
            for n in 0..64 {
                s += x.data()[b * 64 + n] * w.data()[m * 64 + n];
            }
            assert!((y.data()[b * 16 + m] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_rejects_inner_mismatch() {
    let x = Tensor::zeros(&[1, 3]);
    let w = Tensor::zeros(&[2, 4]);
    assert!(matches!(ops::linear(&x, &w, None), Err(Error::Shape { .. })));
}

#[test]
fn sin_affine_matches_scalar_loop() {
    let z = Tensor::randn(&[2, 32], &mut rng(10));
    let w = Tensor::randn(&[32], &mut rng(11));
    let t = Tensor::randn(&[32], &mut rng(12));
    let h = ops::sin_affine(&z, &w, &t).unwrap();
    for b in 0..2 {
        for i in 0..32 {
            let want = (z.data()[b * 32 + i] * w.data()[i] + t.data()[i]).sin();
            assert!((h.data()[b * 32 + i] - want).abs() < 1e-15);
        }
    }
    let short = Tensor::zeros(&[31]);
    assert!(ops::sin_affine(&z, &short, &t).is_err());
}

#[test]
fn maxpool_matches_loop_oracle() {
    let x = Tensor::randn(&[1, 4, 8, 8], &mut rng(13));
    let cfg = MaxPoolConfig {
        kernel: 5,
        stride: 1,
        padding: 2,
    };
    let y = ops::maxpool(&x, cfg).unwrap();
    assert_eq!(y.shape(), &[1, 4, 8, 8]);
    for c in 0..4 {
        for oy in 0..8isize {
            for ox in 0..8isize {
                let mut m = Scalar::NEG_INFINITY;
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        let (iy, ix) = (oy + dy, ox + dx);
                        if (0..8).contains(&iy) && (0..8).contains(&ix) {
                            m = m.max(x.at4(0, c, iy as usize, ix as usize));
                        }
                    }
                }
                assert_eq!(y.at4(0, c, oy as usize, ox as usize), m);
            }
        }
    }
}

#[test]
fn sigmoid_and_gate_identities() {
    assert_eq!(ops::sigmoid(&Tensor::zeros(&[1, 1])).data(), &[0.5]);
    let x = Tensor::randn(&[2, 3, 4, 4], &mut rng(14));
    let ones = Tensor::full(&[2, 3], 1.0);
    assert_eq!(ops::mul_channels(&x, &ones).unwrap(), x);
}

#[test]
fn upsample_repeats_each_pixel() {
    let x = Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
    let y = ops::upsample_nearest_2x(&x).unwrap();
    assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
}

fn projection_weights(n: usize, seed: u64) -> Vec<Scalar> {
    Tensor::randn(&[n], &mut rng(seed)).into_data()
}

#[test]
fn gradcheck_linear_layer() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::randn(&[6, 5], &mut rng(20)));
    let b = store.add("b", Tensor::randn(&[6], &mut rng(21)));
    let x = store.add("x", Tensor::randn(&[3, 5], &mut rng(22)));
    let proj = projection_weights(18, 23);
    let report = finite_diff_check(
        |s, tape| {
            let (xv, wv, bv) = (tape.param(s, x), tape.param(s, w), tape.param(s, b));
            let y = tape.linear(xv, wv, Some(bv))?;
            tape.weighted_sum(y, proj.clone())
        },
        &mut store,
        &[w, b, x],
        GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
}

#[test]
fn gradcheck_sin_affine_with_phase_and_scale() {
    let mut store = ParamStore::new();
    let z = store.add("z", Tensor::randn(&[2, 8], &mut rng(30)));
    let w = store.add("w", Tensor::randn(&[8], &mut rng(31)));
    let t = store.add("t", Tensor::randn(&[8], &mut rng(32)));
    let a = store.add("a", Tensor::full(&[1], 0.7));
    let proj = projection_weights(16, 33);
    let report = finite_diff_check(
        |s, tape| {
            let (zv, wv, tv, av) = (tape.param(s, z), tape.param(s, w), tape.param(s, t), tape.param(s, a));
            let h = tape.sin_affine(zv, wv, Some(tv), Some(av))?;
            tape.weighted_sum(h, proj.clone())
        },
        &mut store,
        &[z, w, t, a],
        GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
}

#[test]
fn gradcheck_conv_bn_pool_chain() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::randn(&[2, 3, 6, 6], &mut rng(40)));
    let w = store.add("w", Tensor::randn(&[4, 3, 3, 3], &mut rng(41)));
    let g = store.add("g", Tensor::randn(&[4], &mut rng(42)));
    let be = store.add("be", Tensor::randn(&[4], &mut rng(43)));
    let proj = projection_weights(2 * 8 * 6 * 6, 44);
    let report = finite_diff_check(
        |s, tape| {
            let xv = tape.param(s, x);
            let wv = tape.param(s, w);
            let y = tape.conv2d(xv, wv, None, Conv2dConfig::new(1, 1))?;
            let (gv, bv) = (tape.param(s, g), tape.param(s, be));
            let y = tape.batch_norm(y, gv, bv, None)?;
            let y = tape.silu(y);
            let p = tape.maxpool(
                y,
                MaxPoolConfig {
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
            )?;
            let c = tape.concat_channels(&[y, p])?;
            tape.weighted_sum(c, proj.clone())
        },
        &mut store,
        &[x, w, g, be],
        GradCheckConfig {
            samples: 200,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.coords_checked >= 100);
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn replaying_a_forward_is_bit_identical() {
    let x = Tensor::randn(&[2, 4, 8, 8], &mut rng(50));
    let w = Tensor::randn(&[8, 4, 3, 3], &mut rng(51));
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let wv = tape.constant(w.clone());
        let y = tape.conv2d(xv, wv, None, Conv2dConfig::new(2, 1)).unwrap();
        let y = tape.silu(y);
        let l = tape.mean_square(y);
        let g = tape.backward(l).unwrap();
        (tape.value(y).clone(), g.input(xv).unwrap().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear_in_input(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = Tensor::randn(&[1, 3, 6, 6], &mut rng(seed));
        let y = Tensor::randn(&[1, 3, 6, 6], &mut rng(seed + 1));
        let w = Tensor::randn(&[2, 3, 3, 3], &mut rng(seed + 2));
        let cfg = Conv2dConfig::new(1, 1);
        let mix: Vec<Scalar> = x.data().iter().zip(y.data()).map(|(p, q)| a as Scalar * p + b as Scalar * q).collect();
        let lhs = ops::conv2d(&Tensor::new(x.shape(), mix).unwrap(), &w, None, cfg).unwrap();
        let cx = ops::conv2d(&x, &w, None, cfg).unwrap();
        let cy = ops::conv2d(&y, &w, None, cfg).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a as Scalar * p + b as Scalar * q)).abs() < 1e-10);
        }
    }

    #[test]
    fn gap_preserves_total_mass(seed in 0u64..1000, h in 1usize..7, w in 1usize..7) {
        let x = Tensor::randn(&[2, 3, h, w], &mut rng(seed));
        let g = ops::global_avg_pool(&x).unwrap();
        for b in 0..2 {
            let mass: Scalar = g.data()[b * 3..(b + 1) * 3].iter().map(|v| v * (h * w) as Scalar).sum();
            let direct: Scalar = x.data()[b * 3 * h * w..(b + 1) * 3 * h * w].iter().sum();
            prop_assert!((mass - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn sin_affine_and_sigmoid_ranges(z in prop::collection::vec(-1e3f64..1e3, 8), w in prop::collection::vec(-10.0f64..10.0, 8)) {
        let z = Tensor::new(&[1, 8], z.into_iter().map(|v| v as Scalar).collect()).unwrap();
        let w = Tensor::new(&[8], w.into_iter().map(|v| v as Scalar).collect()).unwrap();
        let h = ops::sin_affine(&z, &w, &Tensor::zeros(&[8])).unwrap();
        prop_assert!(h.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let s = ops::sigmoid(&z);
        prop_assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
