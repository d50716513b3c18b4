//! Central finite-difference verification of analytic gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{
    evaluate_with_signature, parameter_gradients, predict, PathConfig, StepInput, SupervisedInput, TripletInput,
};
use crate::model::{init_params, ModelConfig, ModelParams, TaskMode};
use crate::objectives::ProfileTarget;
use crate::seed::{stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates sampled from each parameter array.
    pub samples_per_param: usize,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is numerically zero are judged on absolute error.
    pub denominator_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            samples_per_param: 4,
            denominator_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords: Vec<CoordinateCheck>,
    /// Coordinates dropped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
}

impl ParamCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.coords.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error()).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.coords.len()).sum()
    }

    pub fn passed(&self) -> bool {
        self.checked() > 0 && self.max_rel_error() < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} ({} coordinates, max relative error {:.3e}, tolerance {:.1e})",
            self.label,
            if self.passed() { "PASS" } else { "FAIL" },
            self.checked(),
            self.max_rel_error(),
            self.tolerance
        )?;
        for p in &self.params {
            writeln!(
                f,
                "  {:<32} n={:<3} skipped={:<2} max_rel={:.3e}",
                p.name,
                p.coords.len(),
                p.skipped,
                p.max_rel_error()
            )?;
        }
        Ok(())
    }
}

/// Relative error with a floored denominator.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` on randomly
/// sampled coordinates of every parameter array.
///
/// `loss` returns the scalar value and, optionally, a fingerprint of the
/// piecewise-linear region the point lies in. A coordinate whose `+ε` and
/// `-ε` evaluations land in different regions straddles a non-differentiable
/// point and is replaced by another coordinate.
pub fn finite_difference_check<F>(
    label: &str,
    loss: F,
    params: &ModelParams<f64>,
    analytic: &ModelParams<f64>,
    cfg: &GradCheckConfig,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams<f64>) -> Result<(f64, Option<u64>)>,
{
    if !(cfg.epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic.named().into_iter().map(|(_, t)| t.data.clone()).collect();
    if grads.len() != names.len() {
        return Err(Error::Shape("gradient set does not match parameters".into()));
    }
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let len = grads[k].len();
        let order = sample(rng, len, len.min(cfg.samples_per_param.max(1) * 4));
        let mut check = ParamCheck {
            name: name.clone(),
            coords: Vec::new(),
            skipped: 0,
        };
        for idx in order.iter() {
            if check.coords.len() == cfg.samples_per_param {
                break;
            }
            let orig = probe.tensors_mut()[k].data[idx];
            probe.tensors_mut()[k].data[idx] = orig + cfg.epsilon;
            let (up, sig_up) = loss(&probe)?;
            probe.tensors_mut()[k].data[idx] = orig - cfg.epsilon;
            let (down, sig_down) = loss(&probe)?;
            probe.tensors_mut()[k].data[idx] = orig;
            if sig_up != sig_down {
                check.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * cfg.epsilon);
            let a = grads[k][idx];
            check.coords.push(CoordinateCheck {
                index: idx,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric, cfg.denominator_floor),
            });
        }
        out.push(check);
    }
    Ok(GradCheckReport {
        label: label.to_string(),
        params: out,
        tolerance: cfg.tolerance,
    })
}

/// Checks the gradients of a full training step.
///
/// Under a stopped consistency gradient, the positive-branch predictions at
/// the current parameters are frozen and fed as a fixed target, which makes
/// the loss a function whose true derivative is the stop-gradient one.
pub fn check_step(
    label: &str,
    params: &ModelParams<f64>,
    model: &ModelConfig,
    input: &StepInput<'_, f64>,
    paths: &PathConfig,
    cfg: &GradCheckConfig,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    let frozen = match (&input.triplets, paths.stop_gradient && paths.consistency_weight != 0.0) {
        (Some(t), true) if t.fixed_positive_predictions.is_none() => Some(predict(params, model, t.positives)?),
        _ => None,
    };
    let step = StepInput {
        supervised: input.supervised.as_ref().map(|s| SupervisedInput {
            waves: s.waves,
            targets: s.targets,
        }),
        triplets: input.triplets.as_ref().map(|t| TripletInput {
            anchors: t.anchors,
            positives: t.positives,
            negatives: t.negatives,
            fixed_positive_predictions: frozen.as_deref().or(t.fixed_positive_predictions),
        }),
    };
    let (_, analytic) = parameter_gradients(params, model, &step, paths)?;
    let loss = |p: &ModelParams<f64>| {
        let out = evaluate_with_signature(p, model, &step, paths)?;
        Ok((out.breakdown.total, out.relu_signature))
    };
    finite_difference_check(label, loss, params, &analytic, cfg, rng)
}

/// Random inputs and parameters for checking every loss path of one model.
pub struct PathSuite {
    pub model: ModelConfig,
    pub params: ModelParams<f64>,
    supervised: Vec<Vec<f64>>,
    targets: Vec<ProfileTarget>,
    anchors: Vec<Vec<f64>>,
    positives: Vec<Vec<f64>>,
    negatives: Vec<Vec<f64>>,
}

fn test_waves(rng: &mut Rng, n: usize, len: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let f = rng.random_range(0.01..0.1);
            let ph: f64 = rng.random_range(0.0..6.0);
            (0..len)
                .map(|i| 0.5 * (f * i as f64 + ph).sin() + rng.random_range(-0.2..0.2))
                .collect()
        })
        .collect()
}

impl PathSuite {
    /// `rows` supervised rows and `rows` triplets of `input_len` samples.
    pub fn new(model: ModelConfig, input_len: usize, rows: usize, seed: u64) -> Result<Self> {
        model.validate()?;
        model.frame_counts(input_len)?;
        let mut rng = stream(seed, "gradcheck-data");
        let targets = (0..rows)
            .map(|_| {
                ProfileTarget::full(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    if rng.random::<bool>() { 1.0 } else { 0.0 },
                )
            })
            .collect();
        Ok(Self {
            params: init_params(&model, &mut stream(seed, "gradcheck-init")),
            supervised: test_waves(&mut rng, rows, input_len),
            targets,
            anchors: test_waves(&mut rng, rows, input_len),
            positives: test_waves(&mut rng, rows, input_len),
            negatives: test_waves(&mut rng, rows, input_len),
            model,
        })
    }

    fn input(&self, sup: bool, tri: bool) -> StepInput<'_, f64> {
        StepInput {
            supervised: sup.then(|| SupervisedInput {
                waves: &self.supervised,
                targets: &self.targets,
            }),
            triplets: tri.then(|| TripletInput {
                anchors: &self.anchors,
                positives: &self.positives,
                negatives: &self.negatives,
                fixed_positive_predictions: None,
            }),
        }
    }

    /// Supervised, pair-discrimination, both consistency variants, the
    /// combined objective, and the combined objective in each single-task
    /// mode.
    pub fn run(&self, cfg: &GradCheckConfig, rng: &mut Rng) -> Result<Vec<GradCheckReport>> {
        let paths = |repr: f64, cons: f64, stop: bool, mode: TaskMode| PathConfig {
            repr_weight: repr,
            consistency_weight: cons,
            stop_gradient: stop,
            task_mode: mode,
            ..Default::default()
        };
        let multi = TaskMode::Multi;
        let mut cases = vec![
            ("supervised", self.input(true, false), paths(0.0, 0.0, true, multi)),
            ("representation", self.input(false, true), paths(1.0, 0.0, true, multi)),
            ("consistency/stop-gradient", self.input(false, true), paths(0.0, 1.0, true, multi)),
            ("consistency/symmetric", self.input(false, true), paths(0.0, 1.0, false, multi)),
            ("total", self.input(true, true), paths(1.0, 1.0, true, multi)),
        ];
        for (label, mode) in [
            ("total/height", TaskMode::Height),
            ("total/age", TaskMode::Age),
            ("total/gender", TaskMode::Gender),
        ] {
            cases.push((label, self.input(true, true), paths(1.0, 1.0, true, mode)));
        }
        cases
            .iter()
            .map(|(label, input, p)| check_step(label, &self.params, &self.model, input, p, cfg, rng))
            .collect()
    }
}
