//! Randomized finite-difference checks of every analytic gradient in the
//! engine, shared by the test suite and the `gradcheck` command.
//!
//! Instances are drawn from a per-(case, seed) stream. Draws that land within
//! `KINK_MARGIN` of a non-differentiable point (the `|.|` in the relational
//! loss, ReLU at zero) are redrawn from the same stream, so every seed still
//! maps to exactly one instance. The margin-head case is likewise redrawn
//! until its loss is within the range the default tolerances are calibrated
//! for (see [`FR_MAX_LOSS`]), and its scale stays below [`FR_MAX_SCALE`].

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::geometry::pairwise_cosine_matrix;
use crate::grad_oracle::{central_difference_grad, grad_check, GradCheckReport, DEFAULT_ABS_FLOOR, DEFAULT_STEP};
use crate::losses::{
    fc_loss, iled_loss, kl_soft_logits_loss, raw_l2_loss, rpsd_loss, IledParams, IledVariant, KlParams, RpsdParams,
};
use crate::toy_models::{fr_margin_loss, Activation, DenseNetSpec, FrHeadParams, Layer, NetworkState};

pub const KINK_MARGIN: f64 = 1e-3;
/// The default tolerances assume loss values of order one or below; above
/// that, round-off in `f(x +- h)` alone exceeds the absolute floor.
pub const FR_MAX_LOSS: f64 = 2.0;
/// Central-difference truncation error grows with the cube of the head scale;
/// past this the default tolerances no longer hold for a correct gradient.
pub const FR_MAX_SCALE: f64 = 8.0;
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradCase {
    RawL2,
    Fc,
    Kl,
    IledPerSample,
    IledBatchMean,
    Rpsd,
    FrMargin,
    NetworkRelu,
    NetworkTanh,
}

impl GradCase {
    pub const ALL: [GradCase; 9] = [
        GradCase::RawL2,
        GradCase::Fc,
        GradCase::Kl,
        GradCase::IledPerSample,
        GradCase::IledBatchMean,
        GradCase::Rpsd,
        GradCase::FrMargin,
        GradCase::NetworkRelu,
        GradCase::NetworkTanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradCase::RawL2 => "raw_l2",
            GradCase::Fc => "fc",
            GradCase::Kl => "kl",
            GradCase::IledPerSample => "iled_per_sample",
            GradCase::IledBatchMean => "iled_batch_mean",
            GradCase::Rpsd => "rpsd",
            GradCase::FrMargin => "fr_margin",
            GradCase::NetworkRelu => "network_relu",
            GradCase::NetworkTanh => "network_tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    fn stream(self) -> u64 {
        Self::ALL.iter().position(|&c| c == self).unwrap_or(0) as u64
    }
}

/// Settings for one suite run.
#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub step: f64,
    /// Negate the analytic gradient of this case; the suite must then fail it.
    pub sign_flip: Option<GradCase>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            rel_tol: crate::grad_oracle::DEFAULT_REL_TOL,
            abs_floor: DEFAULT_ABS_FLOOR,
            step: DEFAULT_STEP,
            sign_flip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSummary {
    pub case: GradCase,
    pub instances: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub worst_seed: u64,
}

impl CaseSummary {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Analytic and numeric gradient blocks of one instance.
type Blocks = Vec<(Array2<f64>, Array2<f64>)>;

fn numeric<F>(f: F, point: ArrayView2<'_, f64>, step: f64) -> Result<Array2<f64>>
where
    F: FnMut(ArrayView2<'_, f64>) -> f64,
{
    central_difference_grad(f, point, step)
}

fn teacher_student(rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
    let m = rng.random_range(1..=6);
    let d = rng.random_range(2..=8);
    let t = gaussian(rng, m, d, 1.0);
    // mix near-aligned and unrelated students so both loss regimes are visited
    let noise = rng.random_range(0.05..2.0);
    let s = &t + &gaussian(rng, m, d, noise);
    (t, s)
}

fn kinks_clear(t: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>, bt: ArrayView2<'_, f64>, bs: ArrayView2<'_, f64>) -> bool {
    match (pairwise_cosine_matrix(t, bt), pairwise_cosine_matrix(s, bs)) {
        (Ok(st), Ok(ss)) => st.iter().zip(ss.iter()).all(|(a, b)| (a - b).abs() > KINK_MARGIN),
        _ => false,
    }
}

fn relu_clear(net: &NetworkState<f64>, x: ArrayView2<'_, f64>) -> bool {
    match net.forward(x) {
        Ok((_, cache)) => cache
            .pre_activations()
            .iter()
            .all(|p| p.iter().all(|v| v.abs() > KINK_MARGIN)),
        Err(_) => false,
    }
}

fn rebuild(net: &NetworkState<f64>, layers: Vec<Layer<f64>>) -> NetworkState<f64> {
    NetworkState::from_layers(net.spec().clone(), layers).expect("same shapes")
}

fn network_blocks(rng: &mut ChaCha8Rng, activation: Activation, step: f64) -> Result<Blocks> {
    let (net, x, probe) = (0..MAX_REDRAWS)
        .find_map(|_| {
            let depth = rng.random_range(0..=2);
            let mut widths = vec![rng.random_range(2..=6)];
            widths.extend((0..depth).map(|_| rng.random_range(2..=6)));
            widths.push(rng.random_range(2..=5));
            let net = NetworkState::<f64>::init(DenseNetSpec::new(widths.clone(), activation, rng.random())).ok()?;
            // non-zero biases so the bias path is exercised
            let layers = net
                .layers()
                .iter()
                .map(|l| Layer {
                    weight: l.weight.clone(),
                    bias: Array1::from_shape_simple_fn(l.bias.len(), || 0.3 * rng.sample::<f64, _>(StandardNormal)),
                })
                .collect();
            let net = rebuild(&net, layers);
            let m = rng.random_range(1..=4);
            // unit-norm rows, as produced by the dataset generator
            let mut x = gaussian(rng, m, widths[0], 1.0);
            for mut row in x.outer_iter_mut() {
                let n = row.dot(&row).sqrt().max(1e-12);
                row /= n;
            }
            let probe = gaussian(rng, m, *widths.last().unwrap(), 1.0);
            (activation == Activation::Tanh || relu_clear(&net, x.view())).then_some((net, x, probe))
        })
        .expect("a kink-free network within the redraw budget");

    // scalar loss on top: sum(probe * out) + 0.25 * sum(out^2)
    let loss = |out: &Array2<f64>| (&probe * out).sum() + 0.25 * out.mapv(|v| v * v).sum();
    let (out, cache) = net.forward(x.view())?;
    let grad_out = &probe + &out.mapv(|v| 0.5 * v);
    let (grads, grad_in) = net.backward(&cache, grad_out.view())?;

    let mut blocks = Vec::new();
    for l in 0..net.layers().len() {
        let w_num = numeric(
            |w| {
                let mut layers = net.layers().to_vec();
                layers[l].weight = w.to_owned();
                loss(&rebuild(&net, layers).embed(x.view()).expect("shapes"))
            },
            net.layers()[l].weight.view(),
            step,
        )?;
        blocks.push((grads.layers[l].weight.clone(), w_num));
        let bias = net.layers()[l].bias.view().insert_axis(Axis(0)).to_owned();
        let b_num = numeric(
            |b| {
                let mut layers = net.layers().to_vec();
                layers[l].bias = b.row(0).to_owned();
                loss(&rebuild(&net, layers).embed(x.view()).expect("shapes"))
            },
            bias.view(),
            step,
        )?;
        blocks.push((grads.layers[l].bias.view().insert_axis(Axis(0)).to_owned(), b_num));
    }
    let x_num = numeric(|xv| loss(&net.embed(xv).expect("shapes")), x.view(), step)?;
    blocks.push((grad_in, x_num));
    Ok(blocks)
}

fn instance_blocks(case: GradCase, seed: u64, step: f64) -> Result<Blocks> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case.stream());
    let blocks = match case {
        GradCase::RawL2 => {
            let (t, s) = teacher_student(&mut rng);
            let a = raw_l2_loss(t.view(), s.view())?.grad;
            let n = numeric(|sv| raw_l2_loss(t.view(), sv).expect("valid").value, s.view(), step)?;
            vec![(a, n)]
        }
        GradCase::Fc => {
            let (t, s) = teacher_student(&mut rng);
            let a = fc_loss(t.view(), s.view())?.grad;
            let n = numeric(|sv| fc_loss(t.view(), sv).expect("valid").value, s.view(), step)?;
            vec![(a, n)]
        }
        GradCase::Kl => {
            let m = rng.random_range(1..=6);
            let k = rng.random_range(2..=8);
            let t = gaussian(&mut rng, m, k, 3.0);
            let s = gaussian(&mut rng, m, k, 3.0);
            let p = KlParams::default();
            let a = kl_soft_logits_loss(t.view(), s.view(), &p)?.grad;
            let n = numeric(|sv| kl_soft_logits_loss(t.view(), sv, &p).expect("valid").value, s.view(), step)?;
            vec![(a, n)]
        }
        GradCase::IledPerSample | GradCase::IledBatchMean => {
            let (t, s) = teacher_student(&mut rng);
            let p = IledParams {
                variant: if case == GradCase::IledPerSample {
                    IledVariant::PerSample
                } else {
                    IledVariant::BatchMean
                },
                ..IledParams::default()
            };
            let a = iled_loss(t.view(), s.view(), &p)?.grad;
            let n = numeric(|sv| iled_loss(t.view(), sv, &p).expect("valid").value, s.view(), step)?;
            vec![(a, n)]
        }
        GradCase::Rpsd => {
            let p = RpsdParams::default();
            let (t, s, bt, bs) = (0..MAX_REDRAWS)
                .find_map(|_| {
                    let (t, s) = teacher_student(&mut rng);
                    let q = rng.random_range(1..=12);
                    let bt = gaussian(&mut rng, q, t.ncols(), 1.0);
                    let noise = rng.random_range(0.05..2.0);
                    let bs = &bt + &gaussian(&mut rng, q, t.ncols(), noise);
                    kinks_clear(t.view(), s.view(), bt.view(), bs.view()).then_some((t, s, bt, bs))
                })
                .expect("a kink-free instance within the redraw budget");
            let a = rpsd_loss(t.view(), s.view(), bt.view(), bs.view(), &p)?.grad;
            let n = numeric(
                |sv| rpsd_loss(t.view(), sv, bt.view(), bs.view(), &p).expect("valid").value,
                s.view(),
                step,
            )?;
            vec![(a, n)]
        }
        GradCase::FrMargin => {
            let (head, e, w, labels) = (0..MAX_REDRAWS)
                .find_map(|_| {
                    let m = rng.random_range(1..=6);
                    let d = rng.random_range(2..=8);
                    let k = rng.random_range(2..=6);
                    let head = FrHeadParams {
                        classes: k,
                        scale: rng.random_range(1.0..FR_MAX_SCALE),
                        margin: rng.random_range(0.0..0.5),
                    };
                    let w = gaussian(&mut rng, k, d, 1.0);
                    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
                    let noise = rng.random_range(0.05..1.5);
                    let mut e = gaussian(&mut rng, m, d, noise);
                    for (mut row, &y) in e.outer_iter_mut().zip(&labels) {
                        row += &w.row(y);
                    }
                    let value = fr_margin_loss(e.view(), &labels, &head, w.view()).ok()?.loss.value;
                    (value <= FR_MAX_LOSS).then_some((head, e, w, labels))
                })
                .expect("an instance within the calibrated loss range");
            let out = fr_margin_loss(e.view(), &labels, &head, w.view())?;
            let ne = numeric(
                |ev| fr_margin_loss(ev, &labels, &head, w.view()).expect("valid").loss.value,
                e.view(),
                step,
            )?;
            let nw = numeric(
                |wv| fr_margin_loss(e.view(), &labels, &head, wv).expect("valid").loss.value,
                w.view(),
                step,
            )?;
            vec![(out.loss.grad, ne), (out.weight_grad, nw)]
        }
        GradCase::NetworkRelu => network_blocks(&mut rng, Activation::Relu, step)?,
        GradCase::NetworkTanh => network_blocks(&mut rng, Activation::Tanh, step)?,
    };
    Ok(blocks)
}

/// Checks one instance and returns the worst report over its gradient blocks.
pub fn check_instance(case: GradCase, seed: u64, opts: &SuiteOptions) -> Result<GradCheckReport> {
    let flip = opts.sign_flip == Some(case);
    let mut worst: Option<GradCheckReport> = None;
    for (analytic, numeric) in instance_blocks(case, seed, opts.step)? {
        let analytic = if flip { -analytic } else { analytic };
        let r = grad_check(analytic.view(), numeric.view(), opts.rel_tol, opts.abs_floor)?;
        if worst.is_none_or(|w| !(r.max_rel_error <= w.max_rel_error)) {
            worst = Some(r);
        }
    }
    Ok(worst.expect("every case has at least one block"))
}

/// Runs `seeds` instances of every case.
pub fn run_suite(seeds: u64, opts: &SuiteOptions) -> Result<Vec<CaseSummary>> {
    GradCase::ALL
        .into_iter()
        .map(|case| {
            let mut summary = CaseSummary {
                case,
                instances: 0,
                failures: 0,
                max_rel_error: 0.0,
                worst_seed: 0,
            };
            for seed in 0..seeds {
                let r = check_instance(case, seed, opts)?;
                summary.instances += 1;
                if !r.passed {
                    summary.failures += 1;
                }
                if !(r.max_rel_error <= summary.max_rel_error) {
                    summary.max_rel_error = r.max_rel_error;
                    summary.worst_seed = seed;
                }
            }
            Ok(summary)
        })
        .collect()
}
