//! Supervised profiling loss, pair-discrimination loss, consistency loss and
//! their sum.
//!
//! All losses are mean-reduced over the batch and evaluated in `f64`. Each
//! `*_grad` function also returns the gradient with respect to its inputs.

use crate::error::{Error, Result};
use crate::model::TaskMode;
use crate::scalar::{sigmoid, softplus};

/// Per-term weights of the profiling and consistency losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    /// Effective (height, age, gender) weights; single-task modes use only
    /// their own term, unweighted.
    pub fn for_mode(&self, mode: TaskMode) -> [f64; 3] {
        match mode {
            TaskMode::Multi => [self.alpha, self.beta, self.gamma],
            TaskMode::Height => [1.0, 0.0, 0.0],
            TaskMode::Age => [0.0, 1.0, 0.0],
            TaskMode::Gender => [0.0, 0.0, 1.0],
        }
    }
}

/// Regressor output. Height and age are in standardized units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProfilePrediction {
    pub height: f64,
    pub age: f64,
    pub gender_logit: f64,
}

impl ProfilePrediction {
    pub fn gender_probability(&self) -> f64 {
        sigmoid(self.gender_logit)
    }
}

/// Supervised labels: standardized height/age, gender as 0 (M) or 1 (F).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProfileTarget {
    pub height: Option<f64>,
    pub age: Option<f64>,
    pub gender: Option<f64>,
}

impl ProfileTarget {
    pub fn full(height: f64, age: f64, gender: f64) -> Self {
        Self {
            height: Some(height),
            age: Some(age),
            gender: Some(gender),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_p: f64,
    pub l_repr: f64,
    pub l_c: f64,
    pub total: f64,
}

/// Binary cross-entropy of `logit` against a (possibly soft) target in
/// `[0, 1]`: `softplus(x) - y x`.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

fn check_batch(a: usize, b: usize, what: &str) -> Result<()> {
    if a == 0 {
        return Err(Error::Empty(format!("{what}: empty batch")));
    }
    if a != b {
        return Err(Error::Shape(format!("{what}: batch sizes {a} and {b}")));
    }
    Ok(())
}

pub fn supervised_profile_loss(
    pred: &[ProfilePrediction],
    target: &[ProfileTarget],
    w: &LossWeights,
    mode: TaskMode,
) -> Result<f64> {
    supervised_profile_loss_grad(pred, target, w, mode).map(|(l, _)| l)
}

/// Weighted MSE on height and age plus weighted BCE on gender.
pub fn supervised_profile_loss_grad(
    pred: &[ProfilePrediction],
    target: &[ProfileTarget],
    w: &LossWeights,
    mode: TaskMode,
) -> Result<(f64, Vec<ProfilePrediction>)> {
    check_batch(pred.len(), target.len(), "supervised loss")?;
    let [wh, wa, wg] = w.for_mode(mode);
    let n = pred.len() as f64;
    let mut sums = [0.0f64; 3];
    let mut grads = vec![ProfilePrediction::default(); pred.len()];
    for (row, ((p, t), g)) in pred.iter().zip(target).zip(grads.iter_mut()).enumerate() {
        let missing = |what: &str| Error::InvalidArgument(format!("row {row}: missing {what} label"));
        if wh != 0.0 {
            let y = t.height.ok_or_else(|| missing("height"))?;
            let d = p.height - y;
            sums[0] += d * d;
            g.height = wh * 2.0 * d / n;
        }
        if wa != 0.0 {
            let y = t.age.ok_or_else(|| missing("age"))?;
            let d = p.age - y;
            sums[1] += d * d;
            g.age = wa * 2.0 * d / n;
        }
        if wg != 0.0 {
            let y = t.gender.ok_or_else(|| missing("gender"))?;
            sums[2] += bce_with_logit(p.gender_logit, y);
            g.gender_logit = wg * (sigmoid(p.gender_logit) - y) / n;
        }
    }
    let loss = term(wh, sums[0], n) + term(wa, sums[1], n) + term(wg, sums[2], n);
    Ok((loss, grads))
}

fn term(weight: f64, sum: f64, n: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * sum / n
    }
}

pub fn representation_loss(pos_logits: &[f64], neg_logits: &[f64]) -> Result<f64> {
    representation_loss_grad(pos_logits, neg_logits).map(|(l, _, _)| l)
}

/// BCE of the pair discriminator with target 1 for same-speaker pairs and 0
/// for different-speaker pairs:
/// `-(mean log σ(pos) + mean log(1 - σ(neg)))`.
pub fn representation_loss_grad(
    pos_logits: &[f64],
    neg_logits: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_batch(pos_logits.len(), neg_logits.len(), "representation loss")?;
    let n = pos_logits.len() as f64;
    let pos: f64 = pos_logits.iter().map(|&x| softplus(-x)).sum::<f64>() / n;
    let neg: f64 = neg_logits.iter().map(|&x| softplus(x)).sum::<f64>() / n;
    let d_pos = pos_logits.iter().map(|&x| -sigmoid(-x) / n).collect();
    let d_neg = neg_logits.iter().map(|&x| sigmoid(x) / n).collect();
    Ok((pos + neg, d_pos, d_neg))
}

pub fn consistency_loss(
    anchor: &[ProfilePrediction],
    positive: &[ProfilePrediction],
    w: &LossWeights,
    mode: TaskMode,
) -> Result<f64> {
    consistency_loss_grad(anchor, positive, w, mode, true).map(|g| g.loss)
}

pub struct ConsistencyGrad {
    pub loss: f64,
    pub d_anchor: Vec<ProfilePrediction>,
    /// All zeros when the positive branch is a stopped-gradient target.
    pub d_positive: Vec<ProfilePrediction>,
}

/// Profiling loss between two predictions of the same speaker, with the
/// positive branch as target. The gender term uses `σ(positive logit)` as a
/// soft BCE target.
///
/// With `stop_gradient`, `d_positive` is identically zero; otherwise it holds
/// the full derivative of the loss with respect to the positive predictions.
pub fn consistency_loss_grad(
    anchor: &[ProfilePrediction],
    positive: &[ProfilePrediction],
    w: &LossWeights,
    mode: TaskMode,
    stop_gradient: bool,
) -> Result<ConsistencyGrad> {
    check_batch(anchor.len(), positive.len(), "consistency loss")?;
    let [wh, wa, wg] = w.for_mode(mode);
    let n = anchor.len() as f64;
    let mut sums = [0.0f64; 3];
    let mut d_anchor = vec![ProfilePrediction::default(); anchor.len()];
    let mut d_positive = vec![ProfilePrediction::default(); anchor.len()];
    for (i, (a, p)) in anchor.iter().zip(positive).enumerate() {
        if wh != 0.0 {
            let d = a.height - p.height;
            sums[0] += d * d;
            d_anchor[i].height = wh * 2.0 * d / n;
            if !stop_gradient {
                d_positive[i].height = -wh * 2.0 * d / n;
            }
        }
        if wa != 0.0 {
            let d = a.age - p.age;
            sums[1] += d * d;
            d_anchor[i].age = wa * 2.0 * d / n;
            if !stop_gradient {
                d_positive[i].age = -wa * 2.0 * d / n;
            }
        }
        if wg != 0.0 {
            let y = sigmoid(p.gender_logit);
            sums[2] += bce_with_logit(a.gender_logit, y);
            d_anchor[i].gender_logit = wg * (sigmoid(a.gender_logit) - y) / n;
            if !stop_gradient {
                d_positive[i].gender_logit = -wg * a.gender_logit * y * (1.0 - y) / n;
            }
        }
    }
    let loss = term(wh, sums[0], n) + term(wa, sums[1], n) + term(wg, sums[2], n);
    Ok(ConsistencyGrad {
        loss,
        d_anchor,
        d_positive,
    })
}

/// Sum of the three path losses.
pub fn total_loss(l_p: f64, l_repr: f64, l_c: f64) -> Result<LossBreakdown> {
    for (name, v) in [("l_p", l_p), ("l_repr", l_repr), ("l_c", l_c)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(LossBreakdown {
        l_p,
        l_repr,
        l_c,
        total: l_p + l_repr + l_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn pred(h: f64, a: f64, g: f64) -> ProfilePrediction {
        ProfilePrediction {
            height: h,
            age: a,
            gender_logit: g,
        }
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn supervised_worked_example() {
        let w = LossWeights::default();
        let p = [pred(0.5, -0.5, 0.0)];
        let t = [ProfileTarget::full(0.0, 0.0, 1.0)];
        let l = supervised_profile_loss(&p, &t, &w, TaskMode::Multi).unwrap();
        assert!((l - (0.5 + 0.1 * LN_2)).abs() < 1e-12);
        assert!((l - 0.5693).abs() < 1e-4);
        let g = supervised_profile_loss(&p, &t, &w, TaskMode::Gender).unwrap();
        assert!((g - LN_2).abs() < 1e-12);
    }

    #[test]
    fn supervised_perfect_limit() {
        let w = LossWeights::default();
        let p = [pred(0.3, -1.2, 20.0), pred(-0.7, 0.1, -20.0)];
        let t = [ProfileTarget::full(0.3, -1.2, 1.0), ProfileTarget::full(-0.7, 0.1, 0.0)];
        assert!(supervised_profile_loss(&p, &t, &w, TaskMode::Multi).unwrap() < 1e-6);
    }

    #[test]
    fn missing_label_for_active_task() {
        let w = LossWeights::default();
        let p = [pred(0.0, 0.0, 0.0)];
        let t = [ProfileTarget {
            height: Some(0.0),
            age: None,
            gender: None,
        }];
        assert!(supervised_profile_loss(&p, &t, &w, TaskMode::Height).is_ok());
        assert!(supervised_profile_loss(&p, &t, &w, TaskMode::Age).is_err());
        assert!(supervised_profile_loss(&p, &t, &w, TaskMode::Multi).is_err());
    }

    #[test]
    fn single_task_grads_leave_other_heads_at_zero() {
        let w = LossWeights::default();
        let p = [pred(0.4, 0.9, 1.5)];
        let t = [ProfileTarget::full(-0.2, 0.1, 0.0)];
        let (_, g) = supervised_profile_loss_grad(&p, &t, &w, TaskMode::Age).unwrap();
        assert_eq!(g[0].height, 0.0);
        assert_eq!(g[0].gender_logit, 0.0);
        assert!(g[0].age != 0.0);
        let c = consistency_loss_grad(&p, &[pred(0.0, 0.0, 0.0)], &w, TaskMode::Height, false).unwrap();
        assert_eq!(c.d_anchor[0].age, 0.0);
        assert_eq!(c.d_anchor[0].gender_logit, 0.0);
    }

    #[test]
    fn representation_examples() {
        let l = representation_loss(&[0.0], &[0.0]).unwrap();
        assert!((l - 2.0 * LN_2).abs() < 1e-12);
        assert!(representation_loss(&[20.0], &[-20.0]).unwrap() < 1e-8);
        let l = representation_loss(&[logit(0.9)], &[logit(0.2)]).unwrap();
        assert!((l + (0.9f64.ln() + 0.8f64.ln())).abs() < 1e-12);
        assert!((l - 0.3285).abs() < 1e-4);
        assert!(representation_loss(&[], &[]).is_err());
        assert!(representation_loss(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn consistency_examples() {
        let w = LossWeights::default();
        let a = [pred(0.2, 0.2, 0.0)];
        let p = [pred(0.0, 0.4, 0.0)];
        let l = consistency_loss(&a, &p, &w, TaskMode::Multi).unwrap();
        assert!((l - (0.08 + 0.1 * LN_2)).abs() < 1e-12);
        assert!((l - 0.1493).abs() < 1e-4);

        let no_gender = LossWeights { gamma: 0.0, ..w };
        let same = [pred(0.3, -0.8, 1.3)];
        assert_eq!(consistency_loss(&same, &same, &no_gender, TaskMode::Multi).unwrap(), 0.0);

        let y: f64 = sigmoid(1.3);
        let entropy = -(y * y.ln() + (1.0 - y) * (1.0 - y).ln());
        let l = consistency_loss(&same, &same, &w, TaskMode::Multi).unwrap();
        assert!((l - 0.1 * entropy).abs() < 1e-12);
    }

    #[test]
    fn consistency_stop_gradient_zeroes_positive_branch() {
        let w = LossWeights::default();
        let a = [pred(0.2, 0.2, 0.4), pred(-1.0, 0.5, -2.0)];
        let p = [pred(0.0, 0.4, -0.3), pred(0.3, 0.1, 1.0)];
        let g = consistency_loss_grad(&a, &p, &w, TaskMode::Multi, true).unwrap();
        assert!(g
            .d_positive
            .iter()
            .all(|d| d.height == 0.0 && d.age == 0.0 && d.gender_logit == 0.0));
        let g = consistency_loss_grad(&a, &p, &w, TaskMode::Multi, false).unwrap();
        assert!(g.d_positive.iter().all(|d| d.height != 0.0));
    }

    #[test]
    fn grads_match_finite_differences() {
        let w = LossWeights::default();
        let a = vec![pred(0.2, -0.1, 0.4), pred(-1.0, 0.5, -2.0)];
        let p = vec![pred(0.0, 0.4, -0.3), pred(0.3, 0.1, 1.0)];
        let t = vec![ProfileTarget::full(0.1, 0.2, 1.0), ProfileTarget::full(-0.5, 0.0, 0.0)];
        let eps = 1e-6;
        let bump = |v: &[ProfilePrediction], i: usize, k: usize, d: f64| {
            let mut v = v.to_vec();
            match k {
                0 => v[i].height += d,
                1 => v[i].age += d,
                _ => v[i].gender_logit += d,
            }
            v
        };
        let get = |g: &ProfilePrediction, k: usize| [g.height, g.age, g.gender_logit][k];
        let (_, gs) = supervised_profile_loss_grad(&a, &t, &w, TaskMode::Multi).unwrap();
        let cg = consistency_loss_grad(&a, &p, &w, TaskMode::Multi, false).unwrap();
        for i in 0..2 {
            for k in 0..3 {
                let f = |x: &[ProfilePrediction]| supervised_profile_loss(x, &t, &w, TaskMode::Multi).unwrap();
                let fd = (f(&bump(&a, i, k, eps)) - f(&bump(&a, i, k, -eps))) / (2.0 * eps);
                assert!((fd - get(&gs[i], k)).abs() < 1e-8);
                let c = |x: &[ProfilePrediction], y: &[ProfilePrediction]| {
                    consistency_loss(x, y, &w, TaskMode::Multi).unwrap()
                };
                let fd = (c(&bump(&a, i, k, eps), &p) - c(&bump(&a, i, k, -eps), &p)) / (2.0 * eps);
                assert!((fd - get(&cg.d_anchor[i], k)).abs() < 1e-8);
                let fd = (c(&a, &bump(&p, i, k, eps)) - c(&a, &bump(&p, i, k, -eps))) / (2.0 * eps);
                assert!((fd - get(&cg.d_positive[i], k)).abs() < 1e-8);
            }
        }
        let pos = [0.3, -1.2];
        let neg = [0.8, -0.4];
        let (_, dp, dn) = representation_loss_grad(&pos, &neg).unwrap();
        for i in 0..2 {
            let mut hi = pos;
            let mut lo = pos;
            hi[i] += eps;
            lo[i] -= eps;
            let fd = (representation_loss(&hi, &neg).unwrap() - representation_loss(&lo, &neg).unwrap()) / (2.0 * eps);
            assert!((fd - dp[i]).abs() < 1e-8);
            let mut hi = neg;
            let mut lo = neg;
            hi[i] += eps;
            lo[i] -= eps;
            let fd = (representation_loss(&pos, &hi).unwrap() - representation_loss(&pos, &lo).unwrap()) / (2.0 * eps);
            assert!((fd - dn[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn total_is_a_plain_sum() {
        assert_eq!(total_loss(0.0, 0.0, 0.0).unwrap().total, 0.0);
        let b = total_loss(1.0, 2.0, 0.5).unwrap();
        assert_eq!(b.total, 3.5);
        assert_eq!((b.l_p, b.l_repr, b.l_c), (1.0, 2.0, 0.5));
        assert!(total_loss(f64::NAN, 0.0, 0.0).is_err());
        assert!(total_loss(0.0, f64::INFINITY, 0.0).is_err());
    }

    fn arb_batch() -> impl Strategy<Value = (Vec<ProfilePrediction>, Vec<ProfileTarget>)> {
        prop::collection::vec(
            (-3.0f64..3.0, -3.0f64..3.0, -8.0f64..8.0, -3.0f64..3.0, -3.0f64..3.0, any::<bool>()),
            1..12,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|(h, a, g, th, ta, tg)| (pred(h, a, g), ProfileTarget::full(th, ta, tg as u8 as f64)))
                .unzip()
        })
    }

    proptest! {
        #[test]
        fn supervised_nonnegative_and_homogeneous((p, t) in arb_batch(), c in 0.01f64..50.0) {
            let w = LossWeights { alpha: 0.7, beta: 1.3, gamma: 0.2 };
            let l = supervised_profile_loss(&p, &t, &w, TaskMode::Multi).unwrap();
            prop_assert!(l >= 0.0);
            let scaled = LossWeights { alpha: c * w.alpha, beta: c * w.beta, gamma: c * w.gamma };
            let ls = supervised_profile_loss(&p, &t, &scaled, TaskMode::Multi).unwrap();
            prop_assert!((ls - c * l).abs() <= 1e-12 * (1.0 + ls.abs()));
        }

        #[test]
        fn representation_permutation_and_monotonicity(
            pos in prop::collection::vec(-6.0f64..6.0, 1..10),
            seed in any::<u64>(),
            bump in 0.01f64..2.0,
        ) {
            let neg: Vec<f64> = pos.iter().map(|v| 0.5 - v).collect();
            let l = representation_loss(&pos, &neg).unwrap();
            let mut idx: Vec<usize> = (0..pos.len()).collect();
            let k = (seed as usize) % idx.len();
            idx.rotate_left(k);
            let pp: Vec<f64> = idx.iter().map(|&i| pos[i]).collect();
            let nn: Vec<f64> = idx.iter().rev().map(|&i| neg[i]).collect();
            prop_assert!((representation_loss(&pp, &nn).unwrap() - l).abs() < 1e-12);
            let up: Vec<f64> = pos.iter().map(|v| v + bump).collect();
            prop_assert!(representation_loss(&up, &neg).unwrap() < l);
            let down: Vec<f64> = neg.iter().map(|v| v - bump).collect();
            prop_assert!(representation_loss(&pos, &down).unwrap() < l);
        }

        #[test]
        fn consistency_regression_terms_symmetric((p, _) in arb_batch(), (q, _) in arb_batch()) {
            let n = p.len().min(q.len());
            let w = LossWeights { gamma: 0.0, ..Default::default() };
            let ab = consistency_loss(&p[..n], &q[..n], &w, TaskMode::Multi).unwrap();
            let ba = consistency_loss(&q[..n], &p[..n], &w, TaskMode::Multi).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }
}
