//! Annual three-state (susceptible / diseased / dead-of-disease) transition.
//!
//! Shares are conditional on being alive within the disease sub-model, so
//! every step renormalises by the disease survivors `1 - C·f`. Other-cause
//! mortality is independent of disease status and does not move the shares.

use serde::{Deserialize, Serialize};

/// Annual transition probability from a continuous rate.
#[inline]
pub fn rate_to_prob(rate: f64) -> f64 {
    -(-rate).exp_m1()
}

/// Continuous rate from an annual transition probability.
#[inline]
pub fn prob_to_rate(prob: f64) -> f64 {
    -(-prob).ln_1p()
}

/// Annual transition probabilities for one (age, year) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionProbs {
    pub incidence: f64,
    pub case_fatality: f64,
    pub remission: f64,
}

impl TransitionProbs {
    /// Converts rates to probabilities. Remission is capped at `1 - f` so the
    /// diseased share cannot go negative; the flag reports whether it bit.
    pub fn from_rates(incidence: f64, case_fatality: f64, remission: f64) -> (Self, bool) {
        let i = rate_to_prob(incidence);
        let f = rate_to_prob(case_fatality);
        let mut r = rate_to_prob(remission);
        let capped = r > 1.0 - f;
        if capped {
            r = 1.0 - f;
        }
        (
            Self {
                incidence: i,
                case_fatality: f,
                remission: r,
            },
            capped,
        )
    }
}

/// Conditional shares of one disease sub-model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiseaseShares {
    pub susceptible: f64,
    pub diseased: f64,
}

impl DiseaseShares {
    pub fn from_prevalence(prevalence: f64) -> Self {
        let p = prevalence.clamp(0.0, 1.0);
        Self {
            susceptible: 1.0 - p,
            diseased: p,
        }
    }

    /// Share dying of the disease this year.
    #[inline]
    pub fn death_share(&self, probs: &TransitionProbs) -> f64 {
        self.diseased * probs.case_fatality
    }

    /// Advance one year from start-of-year occupancy.
    #[inline]
    pub fn step(&self, probs: &TransitionProbs) -> Self {
        let TransitionProbs {
            incidence: i,
            case_fatality: f,
            remission: r,
        } = *probs;
        let c = self.diseased * (1.0 - f - r) + self.susceptible * i;
        let s = self.susceptible * (1.0 - i) + self.diseased * r;
        let alive = s + c;
        if alive <= 0.0 {
            // Everyone in the sub-model died of the disease; keep a valid state.
            return Self {
                susceptible: 0.0,
                diseased: 1.0,
            };
        }
        Self {
            susceptible: s / alive,
            diseased: c / alive,
        }
    }
}

/// Prevalence after one step, as a closed form of [`DiseaseShares::step`].
#[inline]
pub fn next_prevalence(prevalence: f64, probs: &TransitionProbs) -> f64 {
    let p = prevalence;
    let TransitionProbs {
        incidence: i,
        case_fatality: f,
        remission: r,
    } = *probs;
    (p * (1.0 - f - r) + (1.0 - p) * i) / (1.0 - p * f)
}

/// Remission probability that carries `prevalence` to `next` in one step.
/// Unclamped: may be negative or exceed `1 - f` when the pair is incoherent.
#[inline]
pub fn implied_remission(prevalence: f64, next: f64, incidence: f64, case_fatality: f64) -> f64 {
    let p = prevalence;
    (p * (1.0 - case_fatality) + (1.0 - p) * incidence - next * (1.0 - p * case_fatality)) / p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_prob_inverse() {
        for rate in [0.0, 1e-9, 0.01, 0.5, 3.0] {
            let p = rate_to_prob(rate);
            assert!((prob_to_rate(p) - rate).abs() < 1e-14 * (1.0 + rate));
        }
    }

    #[test]
    fn step_matches_closed_form_and_normalises() {
        let (probs, capped) = TransitionProbs::from_rates(0.02, 0.1, 0.05);
        assert!(!capped);
        let s = DiseaseShares::from_prevalence(0.13);
        let n = s.step(&probs);
        assert!((n.susceptible + n.diseased - 1.0).abs() < 1e-15);
        assert!((n.diseased - next_prevalence(0.13, &probs)).abs() < 1e-15);
    }

    #[test]
    fn implied_remission_inverts_step() {
        let (probs, _) = TransitionProbs::from_rates(0.03, 0.2, 0.07);
        let next = next_prevalence(0.25, &probs);
        let r = implied_remission(0.25, next, probs.incidence, probs.case_fatality);
        assert!((r - probs.remission).abs() < 1e-15);
    }

    #[test]
    fn remission_cap() {
        let (probs, capped) = TransitionProbs::from_rates(0.0, 2.0, 3.0);
        assert!(capped);
        assert!((probs.case_fatality + probs.remission - 1.0).abs() < 1e-15);
    }
}
