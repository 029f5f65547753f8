use super::MappoError;

/// `(p_m_new * p_a_new) / (p_m_old * p_a_old)`, evaluated in log space.
pub fn joint_ratio(old: (f64, f64), new: (f64, f64)) -> Result<f64, MappoError> {
    for p in [old.0, old.1, new.0, new.1] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(MappoError::ZeroProbability(p));
        }
    }
    Ok((new.0.ln() + new.1.ln() - old.0.ln() - old.1.ln()).exp())
}

/// One clipped-surrogate term, negated for minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surrogate {
    /// `-min(r A, clip(r, 1-eps, 1+eps) A)`.
    pub loss: f64,
    /// Derivative of `loss` with respect to `log r`; zero on the clipped branch.
    pub d_log_ratio: f64,
    /// `|r - 1| > eps`.
    pub clipped: bool,
}

pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> Surrogate {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    let (objective, d) = if unclipped <= clipped {
        (unclipped, -unclipped)
    } else {
        (clipped, 0.0)
    };
    Surrogate {
        loss: -objective,
        d_log_ratio: d,
        clipped: (ratio - 1.0).abs() > eps,
    }
}
