//! Group-relative advantage normalization and the clipped surrogate
//! objectives over masked token streams.
//!
//! A group is G trajectories sampled for one prompt. Rewards are normalized
//! within the group,
//!
//! ```text
//! A_i = (r_i - mean(r)) / std(r)        (population std; zeroed below floor)
//! ```
//!
//! and two objective weightings are supported over the action tokens:
//!
//! * standard: every action token of trajectory i weighs 1/(G * total_tokens_i)
//! * step-wise: every token of action segment a_j weighs 1/(G * n_i * |a_j|),
//!   so each think/tool-call cycle supervises equally regardless of length
//!
//! Observation (environment) tokens are masked and never touch the
//! arithmetic. The module evaluates objective values and per-token weights
//! only; gradient propagation lives in the training stack, not here.
//! [`brute_force_objective`] re-evaluates everything with literal nested
//! loops as an independent oracle.

use serde::{Deserialize, Serialize};

/// Old/new policy logprobs for one token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct TokenLogprobs {
    pub logprob_old: f64,
    pub logprob_new: f64,
}

impl From<(f64, f64)> for TokenLogprobs {
    fn from((logprob_old, logprob_new): (f64, f64)) -> Self {
        TokenLogprobs { logprob_old, logprob_new }
    }
}

impl From<TokenLogprobs> for (f64, f64) {
    fn from(t: TokenLogprobs) -> Self {
        (t.logprob_old, t.logprob_new)
    }
}

/// One contiguous segment of the token stream. Masked segments are
/// environment observations and contribute nothing to any objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTokens {
    pub masked: bool,
    pub tokens: Vec<TokenLogprobs>,
}

impl SegmentTokens {
    pub fn action(tokens: Vec<TokenLogprobs>) -> Self {
        SegmentTokens { masked: false, tokens }
    }

    pub fn observation(tokens: Vec<TokenLogprobs>) -> Self {
        SegmentTokens { masked: true, tokens }
    }
}

/// Token records for one trajectory, in stream order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTokens {
    pub segments: Vec<SegmentTokens>,
}

impl TrajectoryTokens {
    /// Number of action segments n_i.
    pub fn n_actions(&self) -> usize {
        self.segments.iter().filter(|s| !s.masked).count()
    }

    /// Total action-token count.
    pub fn action_token_count(&self) -> usize {
        self.segments.iter().filter(|s| !s.masked).map(|s| s.tokens.len()).sum()
    }
}

/// Inputs for one group evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLossInputs {
    pub trajectories: Vec<TrajectoryTokens>,
    pub rewards: Vec<f64>,
    pub clip_eps: f64,
    pub std_floor: f64,
}

pub const DEFAULT_CLIP_EPS: f64 = 0.2;
pub const DEFAULT_STD_FLOOR: f64 = 1e-6;

/// Which per-token weighting the surrogate uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Stepwise,
    Standard,
}

/// Evaluation output. `per_token_weights` has the same [trajectory][segment]
/// [token] shape as the inputs, with zeros on masked tokens, and corresponds
/// to the weighting that was requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub advantages: Vec<f64>,
    pub objective_stepwise: f64,
    pub objective_standard: f64,
    pub per_token_weights: Vec<Vec<Vec<f64>>>,
    /// Fraction of action tokens where the clipped term strictly lowered the
    /// surrogate (the clip actually bound).
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrpoError {
    #[error("shape mismatch: {trajectories} trajectories but {rewards} rewards")]
    ShapeMismatch { trajectories: usize, rewards: usize },
    #[error("group is empty")]
    EmptyGroup,
    #[error("trajectory {trajectory} has an empty action segment (index {segment})")]
    EmptyActionSegment { trajectory: usize, segment: usize },
    #[error("trajectory {trajectory} has no action segments")]
    NoActionSegments { trajectory: usize },
    #[error("clip_eps must be positive, got {0}")]
    BadClipEps(String),
}

/// Group-normalized advantages with population standard deviation. When the
/// spread is below `std_floor` every advantage is zero.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    let g = rewards.len();
    if g == 0 {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < std_floor {
        return vec![0.0; g];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Step-wise weights: each token of action segment a_j gets 1/(G * n_i * |a_j|).
pub fn stepwise_token_weights(t: &TrajectoryTokens, group_size: usize) -> Vec<Vec<f64>> {
    let n = t.n_actions();
    t.segments
        .iter()
        .map(|seg| {
            if seg.masked {
                vec![0.0; seg.tokens.len()]
            } else {
                let w = 1.0 / (group_size as f64 * n as f64 * seg.tokens.len() as f64);
                vec![w; seg.tokens.len()]
            }
        })
        .collect()
}

/// Standard weights: every action token gets 1/(G * total action tokens).
pub fn standard_token_weights(t: &TrajectoryTokens, group_size: usize) -> Vec<Vec<f64>> {
    let total = t.action_token_count();
    t.segments
        .iter()
        .map(|seg| {
            if seg.masked {
                vec![0.0; seg.tokens.len()]
            } else {
                let w = 1.0 / (group_size as f64 * total as f64);
                vec![w; seg.tokens.len()]
            }
        })
        .collect()
}

fn validate(inputs: &GroupLossInputs) -> Result<(), GrpoError> {
    if inputs.trajectories.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    if inputs.trajectories.len() != inputs.rewards.len() {
        return Err(GrpoError::ShapeMismatch {
            trajectories: inputs.trajectories.len(),
            rewards: inputs.rewards.len(),
        });
    }
    if !(inputs.clip_eps > 0.0) {
        return Err(GrpoError::BadClipEps(format!("{}", inputs.clip_eps)));
    }
    for (i, t) in inputs.trajectories.iter().enumerate() {
        if t.n_actions() == 0 {
            return Err(GrpoError::NoActionSegments { trajectory: i });
        }
        for (j, seg) in t.segments.iter().enumerate() {
            if !seg.masked && seg.tokens.is_empty() {
                return Err(GrpoError::EmptyActionSegment { trajectory: i, segment: j });
            }
        }
    }
    Ok(())
}

/// Clipped per-token surrogate: `min(rho*A, clip(rho, 1-eps, 1+eps)*A)`.
/// Returns the term and whether the clip bound.
fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if clipped < unclipped {
        (clipped, true)
    } else {
        (unclipped, false)
    }
}

/// Evaluate the group objective under the requested weighting.
///
/// Masked tokens are skipped outright (their weights are recorded as zero and
/// they never enter the sum), so perturbing a masked logprob cannot change a
/// single bit of the result.
pub fn clipped_objective(
    inputs: &GroupLossInputs,
    weighting: Weighting,
) -> Result<LossReport, GrpoError> {
    validate(inputs)?;
    let g = inputs.trajectories.len();
    let advantages = group_advantages(&inputs.rewards, inputs.std_floor);

    let mut objective_stepwise = 0.0;
    let mut objective_standard = 0.0;
    let mut per_token_weights = Vec::with_capacity(g);
    let mut clipped_tokens = 0usize;
    let mut action_tokens = 0usize;

    for (i, traj) in inputs.trajectories.iter().enumerate() {
        let adv = advantages[i];
        let w_step = stepwise_token_weights(traj, g);
        let w_std = standard_token_weights(traj, g);
        for (j, seg) in traj.segments.iter().enumerate() {
            if seg.masked {
                continue;
            }
            for (k, tok) in seg.tokens.iter().enumerate() {
                let ratio = (tok.logprob_new - tok.logprob_old).exp();
                let (term, bound) = clipped_term(ratio, adv, inputs.clip_eps);
                objective_stepwise += w_step[j][k] * term;
                objective_standard += w_std[j][k] * term;
                action_tokens += 1;
                if bound {
                    clipped_tokens += 1;
                }
            }
        }
        per_token_weights.push(match weighting {
            Weighting::Stepwise => w_step,
            Weighting::Standard => w_std,
        });
    }

    Ok(LossReport {
        advantages,
        objective_stepwise,
        objective_standard,
        per_token_weights,
        clip_fraction: if action_tokens == 0 {
            0.0
        } else {
            clipped_tokens as f64 / action_tokens as f64
        },
    })
}

/// Oracle evaluator: literal nested loops straight off the objective
/// definitions, recomputing group statistics inline. Intended for small
/// instances; kept free of any code shared with [`clipped_objective`].
pub fn brute_force_objective(
    inputs: &GroupLossInputs,
    weighting: Weighting,
) -> Result<f64, GrpoError> {
    validate(inputs)?;
    let g = inputs.trajectories.len() as f64;

    let mut mean = 0.0;
    for r in &inputs.rewards {
        mean += r;
    }
    mean /= g;
    let mut var = 0.0;
    for r in &inputs.rewards {
        var += (r - mean) * (r - mean);
    }
    var /= g;
    let std = var.sqrt();

    let mut total = 0.0;
    for (i, traj) in inputs.trajectories.iter().enumerate() {
        let adv = if std < inputs.std_floor { 0.0 } else { (inputs.rewards[i] - mean) / std };
        let n_i = traj.segments.iter().filter(|s| !s.masked).count() as f64;
        let len_i: usize = traj.segments.iter().filter(|s| !s.masked).map(|s| s.tokens.len()).sum();
        for seg in traj.segments.iter().filter(|s| !s.masked) {
            for tok in &seg.tokens {
                let ratio = (tok.logprob_new - tok.logprob_old).exp();
                let lo = 1.0 - inputs.clip_eps;
                let hi = 1.0 + inputs.clip_eps;
                let clipped = if ratio < lo {
                    lo
                } else if ratio > hi {
                    hi
                } else {
                    ratio
                };
                let term = (ratio * adv).min(clipped * adv);
                let weight = match weighting {
                    Weighting::Stepwise => 1.0 / (g * n_i * seg.tokens.len() as f64),
                    Weighting::Standard => 1.0 / (g * len_i as f64),
                };
                total += weight * term;
            }
        }
    }
    Ok(total)
}

/// Parse line-delimited `GroupLossInputs` records (one JSON object per line).
pub fn read_groups_jsonl(text: &str) -> Result<Vec<GroupLossInputs>, serde_json::Error> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Serialize groups to the line-delimited record format. Numbers use
/// shortest-round-trip decimal, which preserves every bit of the f64.
pub fn write_groups_jsonl(groups: &[GroupLossInputs]) -> String {
    let mut out = String::new();
    for g in groups {
        out.push_str(&serde_json::to_string(g).expect("group inputs serialize"));
        out.push('\n');
    }
    out
}
