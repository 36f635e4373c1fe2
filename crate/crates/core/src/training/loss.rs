use crate::error::{Error, Result};

/// Default clamp for the log terms.
pub const DEFAULT_EPS: f64 = 1e-7;

/// The two terms of the detector objective and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// `λ_D·pos_term + neg_term`.
    pub total: f64,
    /// `−mean(ln(1 − clamp(pos)))`, zero for an empty list.
    pub pos_term: f64,
    /// `−mean(ln(clamp(neg)))`, zero for an empty list.
    pub neg_term: f64,
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    match scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
        Some(i) => Err(Error::invalid(format!("{name}[{i}] = {} outside [0, 1]", scores[i]))),
        None => Ok(()),
    }
}

fn check_params(lambda_d: f64, eps: f64) -> Result<()> {
    if !(lambda_d > 0.0 && lambda_d.is_finite()) {
        return Err(Error::invalid(format!("lambda_d {lambda_d} must be positive")));
    }
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::invalid(format!("eps {eps} outside (0, 1e-3]")));
    }
    Ok(())
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Positive pairs should score 0 and negative pairs 1:
/// `L = −(λ_D·mean(ln(1 − clamp(pos))) + mean(ln(clamp(neg))))` with scores
/// clamped into `[ε, 1 − ε]`.
pub fn detector_loss_parts(pos: &[f64], neg: &[f64], lambda_d: f64, eps: f64) -> Result<LossParts> {
    check_params(lambda_d, eps)?;
    check_scores("pos", pos)?;
    check_scores("neg", neg)?;
    if pos.is_empty() && neg.is_empty() {
        return Err(Error::invalid("both score lists are empty"));
    }
    let clamp = |s: f64| s.clamp(eps, 1.0 - eps);
    let pos_term = -mean(pos.iter().map(|&s| (1.0 - clamp(s)).ln()));
    let neg_term = -mean(neg.iter().map(|&s| clamp(s).ln()));
    Ok(LossParts {
        total: lambda_d * pos_term + neg_term,
        pos_term,
        neg_term,
    })
}

pub fn detector_loss(pos: &[f64], neg: &[f64], lambda_d: f64, eps: f64) -> Result<f64> {
    detector_loss_parts(pos, neg, lambda_d, eps).map(|p| p.total)
}

/// Derivatives of [`detector_loss`] w.r.t. each positive and negative score.
/// Zero where the clamp is active.
pub fn detector_loss_grad(pos: &[f64], neg: &[f64], lambda_d: f64, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let active = |s: f64| s > eps && s < 1.0 - eps;
    let np = pos.len().max(1) as f64;
    let nn = neg.len().max(1) as f64;
    let gp = pos
        .iter()
        .map(|&s| if active(s) { lambda_d / (np * (1.0 - s)) } else { 0.0 })
        .collect();
    let gn = neg
        .iter()
        .map(|&s| if active(s) { -1.0 / (nn * s) } else { 0.0 })
        .collect();
    (gp, gn)
}

/// The objective in its original unbounded orientation,
/// `λ_D·mean(ln D(p⁺)) + mean(ln(1 − D(p⁻)))`, for reporting only. It is
/// `−∞` for a perfect detector.
pub fn literal_objective(pos: &[f64], neg: &[f64], lambda_d: f64) -> f64 {
    lambda_d * mean(pos.iter().map(|s| s.ln())) + mean(neg.iter().map(|s| (1.0 - s).ln()))
}
