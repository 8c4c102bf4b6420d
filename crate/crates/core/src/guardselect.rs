//! Resilience-aware guard selection: Tillé-style inclusion probabilities,
//! alpha-blended relay weights, seeded weighted sampling, and the security
//! metrics used to evaluate a selection policy.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;
use thiserror::Error;

use crate::Asn;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// Tunables for a selection run.
#[derive(Debug, Clone, Copy)]
pub struct SelectionParams {
    /// Blend between adjusted resilience (1) and normalized bandwidth (0).
    pub alpha: f64,
    /// Random-sampling fraction; the sample size is round(g*N) clamped to [1, N].
    pub g: f64,
    pub rng_seed: Option<u64>,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            alpha: 0.5,
            g: 0.10,
            rng_seed: None,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<(), SelectError> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(SelectError::Argument(format!(
                "alpha {} outside [0,1]",
                self.alpha
            )));
        }
        if !(self.g > 0.0 && self.g <= 1.0) {
            return Err(SelectError::Argument(format!(
                "g {} outside (0,1]",
                self.g
            )));
        }
        Ok(())
    }
}

/// A guard candidate entering weight computation.
#[derive(Debug, Clone)]
pub struct GuardCandidate {
    pub fingerprint: String,
    /// Origin-source hijack resilience of the relay's AS from the client.
    pub resilience: f64,
    /// Bandwidth normalized over the guard subset, in [0,1].
    pub bandwidth_norm: f64,
}

/// A relay with its final selection weight.
#[derive(Debug, Clone)]
pub struct WeightedRelay {
    pub fingerprint: String,
    pub resilience: f64,
    pub r_prime: f64,
    pub b_bar: f64,
    pub weight: f64,
}

/// Output of [`tille_adjust`].
#[derive(Debug, Clone)]
pub struct TilleAdjusted {
    /// Estimated inclusion probabilities divided by the sample size; sums to 1,
    /// each entry at most 1/sample_size.
    pub values: Vec<f64>,
    pub sample_size: usize,
    /// True when all inputs were zero and the uniform fallback was applied.
    pub uniform_fallback: bool,
}

/// Elimination-style inclusion-probability adjustment for a fixed sample of
/// round(g*N) relays drawn with probability proportional to resilience.
///
/// Per pass, every entry with k*R(i) exceeding the active sum is pinned to
/// inclusion probability 1 and removed, decrementing k; the rest rescale.
/// The final values are divided by the sample size so they form a selection
/// distribution. Arithmetic is exact (rational) until the final conversion,
/// which keeps order preservation and the documented limits sharp: g = 1/N
/// reduces to plain proportional normalization.
pub fn tille_adjust(r: &[f64], g: f64) -> Result<TilleAdjusted, SelectError> {
    let n = r.len();
    if n == 0 {
        return Err(SelectError::Argument("empty resilience list".into()));
    }
    if !(g > 0.0 && g <= 1.0) {
        return Err(SelectError::Argument(format!("g {g} outside (0,1]")));
    }
    let sample_size = ((g * n as f64).round() as i64).clamp(1, n as i64) as usize;

    let mut rat: Vec<BigRational> = Vec::with_capacity(n);
    for &value in r {
        if !value.is_finite() || value < 0.0 {
            return Err(SelectError::Argument(format!(
                "resilience {value} must be finite and nonnegative"
            )));
        }
        rat.push(BigRational::from_float(value).expect("finite float"));
    }

    if rat.iter().all(Zero::is_zero) {
        return Ok(TilleAdjusted {
            values: vec![1.0 / n as f64; n],
            sample_size,
            uniform_fallback: true,
        });
    }

    let mut active: Vec<usize> = (0..n).collect();
    let mut result: Vec<BigRational> = vec![BigRational::zero(); n];
    let mut k = BigInt::from(sample_size);
    let mut passes = 0usize;
    loop {
        passes += 1;
        assert!(passes <= n + 1, "pinning must terminate within N passes");
        let sum: BigRational = active.iter().map(|&i| rat[i].clone()).sum();
        if sum.is_zero() {
            // Only zero entries remain; spread the leftover sample mass evenly.
            let share = BigRational::new(k.clone(), BigInt::from(active.len()));
            for &i in &active {
                result[i] = share.clone();
            }
            break;
        }
        let k_rat = BigRational::from_integer(k.clone());
        let pinned: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| &rat[i] * &k_rat > sum)
            .collect();
        if pinned.is_empty() {
            for &i in &active {
                result[i] = &rat[i] * &k_rat / &sum;
            }
            break;
        }
        for &i in &pinned {
            result[i] = BigRational::from_integer(BigInt::from(1));
            k -= 1;
        }
        active.retain(|i| !pinned.contains(i));
        if active.is_empty() {
            break;
        }
        assert!(k.is_positive(), "pinned count stays below the sample size");
    }

    let divisor = BigRational::from_integer(BigInt::from(sample_size));
    let values = result
        .into_iter()
        .map(|v| (v / &divisor).to_f64().expect("ratio fits in f64"))
        .collect();
    Ok(TilleAdjusted {
        values,
        sample_size,
        uniform_fallback: false,
    })
}

/// W(i) = alpha * R'(i) + (1 - alpha) * B_bar(i).
pub fn compute_weights(
    candidates: &[GuardCandidate],
    r_prime: &[f64],
    alpha: f64,
) -> Result<Vec<WeightedRelay>, SelectError> {
    if candidates.len() != r_prime.len() {
        return Err(SelectError::Argument(format!(
            "{} candidates but {} adjusted values",
            candidates.len(),
            r_prime.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SelectError::Argument(format!("alpha {alpha} outside [0,1]")));
    }
    candidates
        .iter()
        .zip(r_prime)
        .map(|(c, &rp)| {
            for (label, v) in [("adjusted resilience", rp), ("normalized bandwidth", c.bandwidth_norm)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(SelectError::Argument(format!(
                        "{label} {v} outside [0,1] for {}",
                        c.fingerprint
                    )));
                }
            }
            Ok(WeightedRelay {
                fingerprint: c.fingerprint.clone(),
                resilience: c.resilience,
                r_prime: rp,
                b_bar: c.bandwidth_norm,
                weight: alpha * rp + (1.0 - alpha) * c.bandwidth_norm,
            })
        })
        .collect()
}

/// Draw one relay with probability proportional to weight. Deterministic
/// under a seeded RNG.
pub fn sample_guard<'a, R: Rng + ?Sized>(
    weighted: &'a [WeightedRelay],
    rng: &mut R,
) -> Result<&'a str, SelectError> {
    let total: f64 = weighted.iter().map(|w| w.weight).sum();
    if !(total > 0.0) {
        return Err(SelectError::DegenerateInput(
            "total selection weight is zero".into(),
        ));
    }
    let draw = rng.gen::<f64>() * total;
    let mut cum = 0.0;
    let mut last_positive = None;
    for w in weighted {
        if w.weight > 0.0 {
            cum += w.weight;
            last_positive = Some(w.fingerprint.as_str());
            if draw < cum {
                return Ok(w.fingerprint.as_str());
            }
        }
    }
    // Rounding in the cumulative sum can leave the draw just past the end.
    Ok(last_positive.expect("positive total implies a positive weight"))
}

/// Full per-client distribution: Tillé adjustment over resiliences, weight
/// blend, and normalized pick probabilities.
#[derive(Debug, Clone)]
pub struct Selection {
    pub relays: Vec<WeightedRelay>,
    /// P_pick(i) = W(i) / sum W; aligned with `relays`.
    pub pick_probs: Vec<f64>,
    pub sample_size: usize,
    pub uniform_fallback: bool,
}

pub fn build_selection(
    candidates: &[GuardCandidate],
    alpha: f64,
    g: f64,
) -> Result<Selection, SelectError> {
    let resiliences: Vec<f64> = candidates.iter().map(|c| c.resilience).collect();
    let adjusted = tille_adjust(&resiliences, g)?;
    let relays = compute_weights(candidates, &adjusted.values, alpha)?;
    let total: f64 = relays.iter().map(|w| w.weight).sum();
    if !(total > 0.0) {
        return Err(SelectError::DegenerateInput(
            "total selection weight is zero".into(),
        ));
    }
    let pick_probs = relays.iter().map(|w| w.weight / total).collect();
    Ok(Selection {
        relays,
        pick_probs,
        sample_size: adjusted.sample_size,
        uniform_fallback: adjusted.uniform_fallback,
    })
}

/// Aggregated probability that a client stays unaffected by a hijack on its
/// chosen guard: the dot product of pick and resilience probabilities.
pub fn resilience_probability(
    p_pick: &BTreeMap<String, f64>,
    p_resilient: &BTreeMap<String, f64>,
) -> Result<f64, SelectError> {
    if p_pick.len() != p_resilient.len()
        || !p_pick.keys().all(|k| p_resilient.contains_key(k))
    {
        return Err(SelectError::Argument(
            "pick and resilience maps must share the same relays".into(),
        ));
    }
    let sum: f64 = p_pick.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SelectError::Argument(format!(
            "pick probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(p_pick
        .iter()
        .map(|(fp, &p)| p * p_resilient[fp])
        .sum())
}

/// Shannon entropy in bits of a probability distribution; 0 log 0 counts as 0.
pub fn shannon_entropy(p: &[f64]) -> Result<f64, SelectError> {
    let mut sum = 0.0;
    for &x in p {
        if !x.is_finite() || x < 0.0 {
            return Err(SelectError::Argument(format!(
                "probability {x} must be finite and nonnegative"
            )));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SelectError::Argument(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.log2())
        .sum())
}

/// Entropy of the client distribution behind one relay: normalize per-client
/// pick probabilities for the relay and take the Shannon entropy.
pub fn fingerprint_entropy(per_client_pick: &BTreeMap<Asn, f64>) -> Result<f64, SelectError> {
    let mut total = 0.0;
    for (&client, &p) in per_client_pick {
        if !p.is_finite() || p < 0.0 {
            return Err(SelectError::Argument(format!(
                "pick probability {p} for client {client} must be finite and nonnegative"
            )));
        }
        total += p;
    }
    if total <= 0.0 {
        return Err(SelectError::DegenerateInput(
            "all pick probabilities are zero".into(),
        ));
    }
    let normalized: Vec<f64> = per_client_pick.values().map(|&p| p / total).collect();
    shannon_entropy(&normalized)
}
