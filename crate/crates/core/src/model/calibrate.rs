//! Closed-form parameter counting and the grid search that pins the
//! unspecified width hyperparameters to the published total.

use super::ModelConfig;

/// Published trainable-parameter total of the full model.
pub const PAPER_PARAM_COUNT: usize = 13_242_782;

fn conv(i: usize, o: usize, k: usize) -> usize {
    o * i * k * k + o
}

fn bn(c: usize) -> usize {
    2 * c
}

fn dense_block(c: usize, g: usize, layers: usize) -> usize {
    (0..layers).map(|j| bn(c + j * g) + conv(c + j * g, g, 3)).sum()
}

fn sa(c: usize) -> usize {
    4 * (conv(c, c, 3) + bn(c))
}

/// Parameter count by arithmetic alone, independent of the layer plan.
pub fn closed_form_count(cfg: &ModelConfig) -> usize {
    let (g, l) = (cfg.growth_rate, cfg.layers_per_dense_block);
    let mut n = conv(1, cfg.first_conv_filters, 3);
    let mut c = cfg.first_conv_filters;
    let mut skips = Vec::new();
    for _ in 0..cfg.num_scales {
        n += dense_block(c, g, l);
        let skip = c + l * g;
        if cfg.use_sa {
            n += sa(skip);
        }
        n += bn(skip) + conv(skip, skip, 1);
        skips.push(skip);
        c = skip;
    }
    n += dense_block(c, g, l);
    c = l * g;
    if cfg.use_clstm {
        let hd = cfg.convlstm_hidden;
        n += 4 * conv(c + hd, hd, 3);
        c = hd;
    }
    for &skip in skips.iter().rev() {
        n += 9 * c * c + c;
        n += dense_block(c + skip, g, l);
        c = l * g;
        if cfg.use_sa {
            n += sa(c);
        }
    }
    n + conv(c, cfg.num_classes, 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub growth_rate: usize,
    pub first_conv_filters: usize,
    pub convlstm_hidden: usize,
    pub count: usize,
}

impl Candidate {
    pub fn residual(&self, target: usize) -> i64 {
        self.count as i64 - target as i64
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationResult {
    pub target: usize,
    /// Candidates at the minimal absolute residual, preferred one first.
    pub best: Vec<Candidate>,
    pub searched: usize,
}

impl CalibrationResult {
    pub fn chosen(&self) -> &Candidate {
        &self.best[0]
    }

    pub fn exact(&self) -> bool {
        self.chosen().count == self.target
    }
}

/// Reference widths used to break ties between equally close candidates.
const REFERENCE_GROWTH: usize = 12;
const REFERENCE_STEM: usize = 48;

/// Exhaustive search over growth `1..=max_growth`, stem `1..=max_stem`,
/// hidden `1..=max_hidden` with every other field taken from `base`.
/// Ties at the minimal residual go to the candidate nearest (L1) to growth 12 /
/// 48 stem filters.
pub fn calibrate(base: &ModelConfig, target: usize, max_growth: usize, max_stem: usize, max_hidden: usize) -> CalibrationResult {
    let mut best: Vec<Candidate> = Vec::new();
    let mut best_abs = u64::MAX;
    let mut searched = 0;
    for growth_rate in 1..=max_growth {
        for first_conv_filters in 1..=max_stem {
            for convlstm_hidden in 1..=max_hidden {
                let cfg = ModelConfig {
                    growth_rate,
                    first_conv_filters,
                    convlstm_hidden,
                    ..base.clone()
                };
                let count = closed_form_count(&cfg);
                searched += 1;
                let abs = count.abs_diff(target) as u64;
                let cand = Candidate {
                    growth_rate,
                    first_conv_filters,
                    convlstm_hidden,
                    count,
                };
                if abs < best_abs {
                    best_abs = abs;
                    best = vec![cand];
                } else if abs == best_abs {
                    best.push(cand);
                }
                // count grows with hidden width; nothing further can get closer
                if count > target || !base.use_clstm {
                    break;
                }
            }
        }
    }
    best.sort_by_key(|c| {
        (
            c.growth_rate.abs_diff(REFERENCE_GROWTH) + c.first_conv_filters.abs_diff(REFERENCE_STEM),
            c.growth_rate,
            c.first_conv_filters,
            c.convlstm_hidden,
        )
    });
    CalibrationResult { target, best, searched }
}
