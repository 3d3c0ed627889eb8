//! Adversarial and reconstruction losses.
//!
//! Expectations are realized as arithmetic means over batch and grid cells.
//! Logarithms go through the clamped graph `log`, so saturated
//! discriminators give large but finite losses.

use diffcore::{Graph, Real, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecMode {
    L1,
    L2,
    L1PlusL2,
}

impl RecMode {
    pub fn name(self) -> &'static str {
        match self {
            RecMode::L1 => "l1",
            RecMode::L2 => "l2",
            RecMode::L1PlusL2 => "l1_plus_l2",
        }
    }
}

impl std::str::FromStr for RecMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(RecMode::L1),
            "l2" => Ok(RecMode::L2),
            "l1_plus_l2" => Ok(RecMode::L1PlusL2),
            other => Err(CoreError::invalid(format!("unknown reconstruction mode `{other}`"))),
        }
    }
}

/// `a * adversarial + b * reconstruction`; the balance `eta` is `b / a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub a: f64,
    pub b: f64,
    pub rec_mode: RecMode,
    /// Share of L1 in `L1PlusL2` mode.
    pub l1_share: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 100.0,
            rec_mode: RecMode::L1,
            l1_share: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(a: f64, b: f64, rec_mode: RecMode) -> Self {
        Self {
            a,
            b,
            rec_mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(CoreError::invalid(format!(
                "loss weights must be finite and >= 0, got a={} b={}",
                self.a, self.b
            )));
        }
        if self.a == 0.0 && self.b == 0.0 {
            return Err(CoreError::invalid("loss weights a and b are both zero"));
        }
        if !(0.0..=1.0).contains(&self.l1_share) {
            return Err(CoreError::invalid(format!("l1_share {} outside [0, 1]", self.l1_share)));
        }
        Ok(())
    }

    /// `b / a`, infinite for reconstruction-only training.
    pub fn eta(&self) -> f64 {
        self.b / self.a
    }
}

/// `-mean(log S_real) - mean(log(1 - S_fake))`.
pub fn d_loss<T: Real>(g: &mut Graph<T>, s_real: Var, s_fake: Var) -> Result<Var> {
    let lr = g.log(s_real)?;
    let real = g.mean(lr)?;
    let one_minus = g.rsub_scalar(T::one(), s_fake)?;
    let lf = g.log(one_minus)?;
    let fake = g.mean(lf)?;
    let s = g.add(real, fake)?;
    Ok(g.mul_scalar(s, -T::one())?)
}

/// Non-saturating generator objective `-mean(log S_fake)`.
pub fn g_adv_loss<T: Real>(g: &mut Graph<T>, s_fake: Var) -> Result<Var> {
    let l = g.log(s_fake)?;
    let m = g.mean(l)?;
    Ok(g.mul_scalar(m, -T::one())?)
}

pub fn l1_loss<T: Real>(g: &mut Graph<T>, v: Var, v_hat: Var) -> Result<Var> {
    let d = g.sub(v_hat, v)?;
    let a = g.abs(d)?;
    Ok(g.mean(a)?)
}

pub fn l2_loss<T: Real>(g: &mut Graph<T>, v: Var, v_hat: Var) -> Result<Var> {
    let d = g.sub(v_hat, v)?;
    let s = g.square(d)?;
    Ok(g.mean(s)?)
}

fn check_same_shape<T: Real>(g: &Graph<T>, v: Var, v_hat: Var) -> Result<()> {
    if g.shape(v) != g.shape(v_hat) {
        return Err(CoreError::invalid(format!(
            "reconstruction target {:?} and prediction {:?} differ in shape",
            g.shape(v),
            g.shape(v_hat)
        )));
    }
    Ok(())
}

/// Unweighted reconstruction term selected by `w.rec_mode`.
pub fn rec_loss<T: Real>(g: &mut Graph<T>, v: Var, v_hat: Var, w: &LossWeights) -> Result<Var> {
    check_same_shape(g, v, v_hat)?;
    match w.rec_mode {
        RecMode::L1 => l1_loss(g, v, v_hat),
        RecMode::L2 => l2_loss(g, v, v_hat),
        RecMode::L1PlusL2 => {
            let l1 = l1_loss(g, v, v_hat)?;
            let l2 = l2_loss(g, v, v_hat)?;
            let l1 = g.mul_scalar(l1, T::from_f64(w.l1_share))?;
            let l2 = g.mul_scalar(l2, T::from_f64(1.0 - w.l1_share))?;
            Ok(g.add(l1, l2)?)
        }
    }
}

/// Weighted generator loss and its two weighted parts.
#[derive(Debug, Clone, Copy)]
pub struct GLoss {
    pub total: Var,
    /// `a * g_adv`, absent when `a == 0`.
    pub adv: Option<Var>,
    /// `b * rec`, absent when `b == 0`.
    pub rec: Option<Var>,
}

/// `a * g_adv(S_fake) + b * rec`. With hourglass intermediate predictions
/// the reconstruction term is the mean over all of them (`b / n` each);
/// otherwise it is `rec(v, v_hat)`. `s_fake` may be `None` when `a == 0`.
pub fn combined_g_loss<T: Real>(
    g: &mut Graph<T>,
    s_fake: Option<Var>,
    v: Var,
    v_hat: Var,
    intermediates: &[Var],
    w: &LossWeights,
) -> Result<GLoss> {
    w.validate()?;
    let adv = if w.a > 0.0 {
        let s = s_fake.ok_or_else(|| CoreError::invalid("adversarial weight set but no discriminator output"))?;
        let l = g_adv_loss(g, s)?;
        Some(g.mul_scalar(l, T::from_f64(w.a))?)
    } else {
        None
    };
    let rec = if w.b > 0.0 {
        let r = if intermediates.is_empty() {
            rec_loss(g, v, v_hat, w)?
        } else {
            let mut acc = rec_loss(g, v, intermediates[0], w)?;
            for &p in &intermediates[1..] {
                let r = rec_loss(g, v, p, w)?;
                acc = g.add(acc, r)?;
            }
            g.mul_scalar(acc, T::from_f64(1.0 / intermediates.len() as f64))?
        };
        Some(g.mul_scalar(r, T::from_f64(w.b))?)
    } else {
        None
    };
    let total = match (adv, rec) {
        (Some(x), Some(y)) => g.add(x, y)?,
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => unreachable!("validated weights"),
    };
    Ok(GLoss { total, adv, rec })
}
