use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::zoo::{build_layer, LayerSpec, QMixBlock, SharedMixer, VariantKind};

/// Closed-form versus enumerated parameter counts for one width.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityCheck {
    pub c: usize,
    pub ratio: usize,
    pub latent: usize,
    /// `9C²`.
    pub predicted_baseline: u64,
    /// Owned parameters of a bias-free 3×3 `C → C` convolution.
    pub enumerated_baseline: u64,
    /// `2C²/R + 2C/R`.
    pub predicted_qmix: u64,
    /// Block parameters plus the shared prefix it reads.
    pub enumerated_qmix: u64,
    /// `2C²/R`: the projection matrices alone.
    pub enumerated_projections: u64,
    /// `enumerated_baseline / enumerated_projections`.
    pub ratio_vs_baseline: f64,
    /// `(2C/R) / (2C²/R) = 1/C`.
    pub dominant_term_gap: f64,
}

impl ComplexityCheck {
    pub fn holds(&self) -> bool {
        self.enumerated_qmix == self.predicted_qmix && self.enumerated_baseline == self.predicted_baseline
    }
}

/// Builds a bare convolution and a QMix block per width and compares their
/// enumerated sizes with the closed forms.
pub fn verify_complexity_model(widths: &[usize], ratio: usize) -> Result<Vec<ComplexityCheck>> {
    widths
        .iter()
        .map(|&c| {
            if ratio == 0 || c == 0 || c % ratio != 0 {
                return Err(Error::Divisibility { channels: c, ratio });
            }
            let r = c / ratio;
            let conv = build_layer(
                &LayerSpec::Conv2d {
                    c1: c,
                    c2: c,
                    k: 3,
                    s: 1,
                    bias: false,
                },
                0,
                None,
            )?;
            let mut mixer = SharedMixer::new(VariantKind::QMixBlock, 0);
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let block = QMixBlock::build(&mut store, &mut rng, c, c, ratio, VariantKind::QMixBlock, 1, &mut mixer)?;
            let own = block.own_param_count(&store) as u64;
            let (c64, r64) = (c as u64, ratio as u64);
            let baseline = conv.param_count() as u64;
            Ok(ComplexityCheck {
                c,
                ratio,
                latent: r,
                predicted_baseline: 9 * c64 * c64,
                enumerated_baseline: baseline,
                predicted_qmix: 2 * c64 * c64 / r64 + 2 * c64 / r64,
                enumerated_qmix: own + mixer.param_count() as u64,
                enumerated_projections: own,
                ratio_vs_baseline: baseline as f64 / own as f64,
                dominant_term_gap: (2 * c64 / r64) as f64 / own as f64,
            })
        })
        .collect()
}
