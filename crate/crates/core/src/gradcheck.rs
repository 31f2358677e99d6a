//! Finite-difference verification of every differentiable op, layer and block in
//! 64-bit precision.
//!
//! Each check draws a random problem per trial, reduces the output with fixed
//! random weights to a scalar, and compares the tape's gradient against a
//! central difference at randomly chosen coordinates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{ChannelAttention, ConvVariant, FeatureNorm, VariantConv, FNORM_KERNEL};
use crate::model::{Ccb, CrossSrn, Mffg, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{kernels, Shape, Tape, Tensor, Var};

type Eval = Box<dyn Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<(Var, Vec<Option<Var>>)>>;

/// One randomized instance: leaf values plus a function that rebuilds the
/// computation from (possibly perturbed) leaf values. `eval` returns the output
/// and, per leaf, the variable it was bound to (`None` if unused).
pub struct Problem {
    pub leaves: Vec<Tensor<f64>>,
    pub eval: Eval,
}

/// A named family of problems.
pub struct GradCheck {
    pub name: String,
    pub make: Box<dyn Fn(&mut ChaCha8Rng) -> Problem>,
}

impl GradCheck {
    pub fn new(name: impl Into<String>, make: impl Fn(&mut ChaCha8Rng) -> Problem + 'static) -> Self {
        GradCheck {
            name: name.into(),
            make: Box::new(make),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates probed per trial, spread over the leaves.
    pub coords_per_trial: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 100,
            step: 1e-4,
            tolerance: 1e-3,
            coords_per_trial: 32,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
    /// Coordinates compared.
    pub probed: usize,
    /// Coordinates skipped because the stencil crossed a ReLU/L1 kink.
    pub straddled: usize,
    pub passed: bool,
    /// Description of the worst coordinate, or of the error that aborted the check.
    pub detail: String,
}

/// Below this gradient magnitude the comparison falls back to absolute error.
const MAGNITUDE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / denom
}

fn reduce(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    tape.weighted_sum(out, weights.clone())
}

fn loss_at(problem: &Problem, leaves: &[Tensor<f64>], weights: &Tensor<f64>) -> Result<(f64, Vec<i8>)> {
    let mut tape = Tape::new();
    let (out, _) = (problem.eval)(&mut tape, leaves)?;
    let loss = reduce(&mut tape, out, weights)?;
    Ok((tape.value(loss).data()[0], tape.kink_pattern()))
}

pub fn run_check(check: &GradCheck, cfg: &GradCheckConfig) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = 0.0f64;
    let mut detail = String::new();
    let mut probed = 0usize;
    let mut straddled = 0usize;
    for trial in 0..cfg.trials {
        match run_trial(check, cfg, &mut rng) {
            Ok(t) => {
                probed += t.probed;
                straddled += t.straddled;
                if t.worst > worst || detail.is_empty() {
                    worst = worst.max(t.worst);
                    detail = format!("trial {trial}: {}", t.location);
                }
            }
            Err(e) => {
                return CheckOutcome {
                    name: check.name.clone(),
                    trials: trial,
                    max_rel_err: f64::INFINITY,
                    probed,
                    straddled,
                    passed: false,
                    detail: format!("trial {trial} failed: {e}"),
                }
            }
        }
    }
    // A stencil that crosses a kink says nothing about the derivative, but if
    // most of them do the check has not really tested anything.
    let enough = probed > 0 && straddled * 10 <= probed + straddled;
    CheckOutcome {
        name: check.name.clone(),
        trials: cfg.trials,
        max_rel_err: worst,
        probed,
        straddled,
        passed: worst < cfg.tolerance && enough,
        detail,
    }
}

struct TrialResult {
    worst: f64,
    location: String,
    probed: usize,
    straddled: usize,
}

fn run_trial(check: &GradCheck, cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<TrialResult> {
    let problem = (check.make)(rng);
    let mut tape = Tape::new();
    let (out, vars) = (problem.eval)(&mut tape, &problem.leaves)?;
    let weights = Tensor::from_fn(tape.shape(out), |_, _, _, _| rng.gen_range(-1.0..1.0));
    let loss = reduce(&mut tape, out, &weights)?;
    let pattern = tape.kink_pattern();
    tape.backward(loss)?;

    let candidates: Vec<usize> = vars
        .iter()
        .enumerate()
        .filter(|(i, v)| v.is_some() && problem.leaves[*i].numel() > 0)
        .map(|(i, _)| i)
        .collect();
    let mut result = TrialResult {
        worst: 0.0,
        location: String::new(),
        probed: 0,
        straddled: 0,
    };
    // Redraw coordinates whose stencil straddles a kink, within a budget.
    let budget = 4 * cfg.coords_per_trial;
    let mut attempts = 0;
    while result.probed < cfg.coords_per_trial && attempts < budget {
        attempts += 1;
        let Some(&leaf) = candidates.choose(rng) else {
            break;
        };
        let idx = rng.gen_range(0..problem.leaves[leaf].numel());
        let var = vars[leaf].expect("filtered");
        let analytic = tape.grad(var).map_or(0.0, |g| g.data()[idx]);

        let mut perturbed = problem.leaves.clone();
        let base = perturbed[leaf].data()[idx];
        perturbed[leaf].data_mut()[idx] = base + cfg.step;
        let (plus, p_plus) = loss_at(&problem, &perturbed, &weights)?;
        perturbed[leaf].data_mut()[idx] = base - cfg.step;
        let (minus, p_minus) = loss_at(&problem, &perturbed, &weights)?;
        if p_plus != pattern || p_minus != pattern {
            result.straddled += 1;
            continue;
        }
        result.probed += 1;
        let numeric = (plus - minus) / (2.0 * cfg.step);

        let err = relative_error(analytic, numeric);
        if err >= result.worst || result.location.is_empty() {
            result.worst = err;
            result.location =
                format!("leaf {leaf}[{idx}] analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }
    Ok(result)
}

pub fn run_all(checks: &[GradCheck], cfg: &GradCheckConfig) -> Vec<CheckOutcome> {
    checks.iter().map(|c| run_check(c, cfg)).collect()
}

fn uniform(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Uniform values bounded away from zero, so activation kinks stay outside the
/// finite-difference stencil.
fn off_kink(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let mag = rng.gen_range(0.01..1.0);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

fn bind(tape: &mut Tape<f64>, leaves: &[Tensor<f64>]) -> Vec<Var> {
    leaves.iter().map(|t| tape.leaf(t.clone(), true)).collect()
}

fn all_bound(vars: &[Var]) -> Vec<Option<Var>> {
    vars.iter().copied().map(Some).collect()
}

fn op_check(
    name: &str,
    gen: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>> + 'static,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Clone + 'static,
) -> GradCheck {
    GradCheck::new(name, move |rng| {
        let f = f.clone();
        Problem {
            leaves: gen(rng),
            eval: Box::new(move |tape, leaves| {
                let vars = bind(tape, leaves);
                let out = f(tape, &vars)?;
                Ok((out, all_bound(&vars)))
            }),
        }
    })
}

/// Layer-level problem: leaf 0 is the input, the rest are the store's tensors.
fn store_check(
    name: &str,
    build: impl Fn(&mut ChaCha8Rng) -> (Tensor<f64>, ParamStore<f64>, LayerFn) + 'static,
) -> GradCheck {
    GradCheck::new(name, move |rng| {
        let (input, store, forward) = build(rng);
        let mut leaves = vec![input];
        leaves.extend(store.tensors().iter().cloned());
        Problem {
            leaves,
            eval: Box::new(move |tape, leaves| {
                let mut store = store.clone();
                for (dst, src) in store.tensors_mut().iter_mut().zip(&leaves[1..]) {
                    *dst = src.clone();
                }
                let x = tape.leaf(leaves[0].clone(), true);
                let out = forward(tape, &store, x)?;
                let mut vars = vec![Some(x)];
                vars.extend(store.ids().map(|id| tape.param_var(id)));
                Ok((out, vars))
            }),
        }
    })
}

type LayerFn = Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>, Var) -> Result<Var>>;

/// Randomize every parameter (biases included) so no gradient path is trivially zero.
fn randomize(store: &mut ParamStore<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn conv_check(name: &str, cin: usize, cout: usize, kh: usize, kw: usize) -> GradCheck {
    op_check(
        name,
        move |rng| {
            vec![
                uniform(Shape::new(2, cin, 5, 6), rng),
                uniform(Shape::new(cout, cin, kh, kw), rng),
                uniform(Shape::vector(cout), rng),
            ]
        },
        |t, v| t.conv2d(v[0], v[1], Some(v[2])),
    )
}

fn variant_check(name: &str, variant: ConvVariant, m: usize) -> GradCheck {
    store_check(name, move |rng| {
        let mut store = ParamStore::new();
        let conv = VariantConv::new(&mut store, "conv", variant, m, 3, 3, 1.0, rng).expect("odd m");
        randomize(&mut store, 0.5, rng);
        let input = uniform(Shape::new(2, 3, 6, 5), rng);
        let f: LayerFn = Box::new(move |tape, store, x| conv.forward(tape, store, &x));
        (input, store, f)
    })
}

fn tiny_config(c: usize, groups: usize, scale: usize) -> ModelConfig {
    ModelConfig {
        scale,
        channels: c,
        groups,
        ..ModelConfig::default()
    }
}

/// The full verification suite: tensor ops, layers, blocks and a tiny network.
pub fn standard_checks() -> Vec<GradCheck> {
    let mut checks = vec![
        conv_check("conv2d_3x3", 3, 4, 3, 3),
        conv_check("conv2d_1x3", 3, 2, 1, 3),
        conv_check("conv2d_3x1", 3, 2, 3, 1),
        conv_check("conv2d_1x5", 2, 2, 1, 5),
        conv_check("conv2d_7x1", 2, 2, 7, 1),
        conv_check("conv2d_1x1", 4, 3, 1, 1),
        op_check(
            "depthwise_conv2d",
            |rng| {
                vec![
                    uniform(Shape::new(2, 3, 5, 5), rng),
                    uniform(Shape::new(3, 1, 3, 3), rng),
                    uniform(Shape::vector(3), rng),
                ]
            },
            |t, v| t.depthwise_conv2d(v[0], v[1], Some(v[2])),
        ),
        op_check(
            "leaky_relu",
            |rng| vec![off_kink(Shape::new(2, 3, 4, 4), rng)],
            |t, v| Ok(t.leaky_relu(v[0], crate::layers::LEAKY_SLOPE)),
        ),
        op_check(
            "relu",
            |rng| vec![off_kink(Shape::new(2, 3, 4, 4), rng)],
            |t, v| Ok(t.relu(v[0])),
        ),
        op_check(
            "sigmoid",
            |rng| vec![uniform(Shape::new(2, 3, 4, 4), rng).map(|v| 4.0 * v)],
            |t, v| Ok(t.sigmoid(v[0])),
        ),
        op_check(
            "global_avg_pool",
            |rng| vec![uniform(Shape::new(2, 3, 4, 5), rng)],
            |t, v| Ok(t.global_avg_pool(v[0])),
        ),
        op_check(
            "fully_connected",
            |rng| {
                vec![
                    uniform(Shape::new(3, 5, 1, 1), rng),
                    uniform(Shape::new(4, 5, 1, 1), rng),
                    uniform(Shape::vector(4), rng),
                ]
            },
            |t, v| t.fully_connected(v[0], v[1], Some(v[2])),
        ),
        op_check(
            "pixel_shuffle",
            |rng| vec![uniform(Shape::new(2, 12, 3, 3), rng)],
            |t, v| t.pixel_shuffle(v[0], 2),
        ),
        op_check(
            "add",
            |rng| {
                vec![
                    uniform(Shape::new(2, 3, 4, 4), rng),
                    uniform(Shape::new(2, 3, 4, 4), rng),
                ]
            },
            |t, v| t.add(v[0], v[1]),
        ),
        op_check(
            "mul_channelwise",
            |rng| {
                vec![
                    uniform(Shape::new(2, 3, 4, 4), rng),
                    uniform(Shape::new(2, 3, 1, 1), rng),
                ]
            },
            |t, v| t.mul_channelwise(v[0], v[1]),
        ),
        op_check(
            "concat_channels",
            |rng| {
                vec![
                    uniform(Shape::new(2, 2, 3, 3), rng),
                    uniform(Shape::new(2, 3, 3, 3), rng),
                    uniform(Shape::new(2, 1, 3, 3), rng),
                ]
            },
            |t, v| t.concat_channels(v),
        ),
        op_check(
            "split_channels",
            |rng| vec![uniform(Shape::new(2, 6, 3, 3), rng)],
            |t, v| {
                // Recombine the pieces out of order so each slice's adjoint is exercised.
                let parts = t.split_channels(v[0], &[1, 2, 3])?;
                let mixed = t.mul(parts[0], parts[0])?;
                t.concat_channels(&[parts[2], mixed, parts[1]])
            },
        ),
        op_check(
            "mse_loss",
            |rng| vec![uniform(Shape::new(2, 3, 4, 4), rng)],
            |t, v| {
                let target = Tensor::full(Shape::new(2, 3, 4, 4), 0.25);
                t.mse_loss(v[0], target)
            },
        ),
        op_check(
            "l1_loss",
            |rng| vec![off_kink(Shape::new(2, 3, 4, 4), rng)],
            |t, v| t.l1_loss(v[0], Tensor::zeros(Shape::new(2, 3, 4, 4))),
        ),
        variant_check("cross_conv", ConvVariant::Cross, 3),
        variant_check("cross_conv_m5", ConvVariant::Cross, 5),
        variant_check("seq_conv", ConvVariant::Seq, 3),
        variant_check("vanilla_conv", ConvVariant::Vanilla, 3),
        store_check("channel_attention", |rng| {
            let mut store = ParamStore::new();
            let ca = ChannelAttention::new(&mut store, "ca", 32, 16, rng);
            randomize(&mut store, 0.5, rng);
            let input = uniform(Shape::new(2, 32, 3, 3), rng);
            let f: LayerFn = Box::new(move |tape, store, x| ca.forward(tape, store, &x));
            (input, store, f)
        }),
        store_check("feature_norm", |rng| {
            let mut store = ParamStore::new();
            let fnorm =
                FeatureNorm::new(&mut store, "fn", 4, FNORM_KERNEL, 1.0, rng).expect("odd kernel");
            randomize(&mut store, 0.5, rng);
            let input = uniform(Shape::new(2, 4, 5, 5), rng);
            let f: LayerFn = Box::new(move |tape, store, x| fnorm.forward(tape, store, &x));
            (input, store, f)
        }),
        store_check("ccb_16", |rng| {
            let cfg = tiny_config(16, 1, 2);
            let mut store = ParamStore::new();
            let ccb = Ccb::new(&mut store, "ccb", 16, &cfg, rng).expect("valid");
            randomize(&mut store, 0.3, rng);
            let input = uniform(Shape::new(1, 16, 6, 6), rng);
            let f: LayerFn = Box::new(move |tape, store, x| ccb.forward(tape, store, &x));
            (input, store, f)
        }),
        store_check("mffg_16", |rng| {
            let cfg = tiny_config(16, 1, 2);
            let mut store = ParamStore::new();
            let group = Mffg::new(&mut store, "g", &cfg, rng).expect("valid");
            randomize(&mut store, 0.3, rng);
            let input = uniform(Shape::new(1, 16, 6, 6), rng);
            let f: LayerFn = Box::new(move |tape, store, x| group.forward(tape, store, &x));
            (input, store, f)
        }),
    ];
    checks.push(store_check("network_c8_g1_x2", |rng| {
        let cfg = tiny_config(8, 1, 2);
        let mut store = ParamStore::new();
        let net = CrossSrn::new(&mut store, &cfg, rng).expect("valid");
        randomize(&mut store, 0.3, rng);
        let input = uniform(Shape::new(1, 3, 8, 8), rng).map(|v| 0.5 + 0.5 * v);
        let f: LayerFn = Box::new(move |tape, store, x| net.forward(tape, store, &x));
        (input, store, f)
    }));
    checks
}

/// A LeakyReLU whose backward rule is deliberately wrong (slope applied to the
/// positive side too). Used to prove the harness catches broken rules.
pub fn corrupted_check() -> GradCheck {
    op_check(
        "corrupted_leaky_relu",
        |rng| vec![off_kink(Shape::new(1, 2, 3, 3), rng)],
        |t, v| {
            let value = kernels::leaky_relu(t.value(v[0]), 0.05);
            Ok(t.custom(
                &[v[0]],
                value,
                Box::new(|g, _inputs| vec![g.map(|x| 0.05 * x)]),
            ))
        },
    )
}

/// Keep only checks whose name matches one of `names` (`all` keeps everything).
pub fn select(checks: Vec<GradCheck>, names: &[String]) -> Vec<GradCheck> {
    if names.is_empty() || names.iter().any(|n| n == "all") {
        return checks;
    }
    checks
        .into_iter()
        .filter(|c| names.iter().any(|n| c.name == *n || c.name.starts_with(n.as_str())))
        .collect()
}
