//! Claim verdicts over trial records.

use serde::{Deserialize, Serialize};

use super::TrialRecord;
use crate::solvers::SolverKind;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

/// Linear interpolation between order statistics; None for empty input or NaN.
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q = |p| quantile(&v, p).unwrap();
        Some(Quantiles { min: v[0], q05: q(0.05), q25: q(0.25), median: q(0.5), q75: q(0.75), q95: q(0.95), max: v[v.len() - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimVerdict {
    pub claim: String,
    pub description: String,
    pub verdict: Verdict,
    pub trials: usize,
    pub required_trials: usize,
    pub successes: usize,
    pub required_successes: usize,
    pub frequency: Option<f64>,
    pub threshold: f64,
    /// successes - required_successes (for statistic claims: distance to the nearest bound, signed)
    pub margin: f64,
    /// Claim-specific scalar such as a median ratio.
    pub statistic: Option<f64>,
    pub quantiles: Option<Quantiles>,
}

impl ClaimVerdict {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Frequency claim: `outcomes[i]` says whether trial i succeeded, `values` feed the quantiles.
    pub fn frequency(claim: &str, description: &str, outcomes: &[bool], values: &[f64], required_trials: usize, threshold: f64) -> Self {
        let n = outcomes.len();
        let successes = outcomes.iter().filter(|&&o| o).count();
        let required_successes = ((threshold * n as f64) - 1e-9).ceil().max(0.0) as usize;
        let verdict = if n == 0 || n < required_trials {
            Verdict::Inconclusive
        } else if successes >= required_successes {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        ClaimVerdict {
            claim: claim.into(),
            description: description.into(),
            verdict,
            trials: n,
            required_trials,
            successes,
            required_successes,
            frequency: (n > 0).then(|| successes as f64 / n as f64),
            threshold,
            margin: successes as f64 - required_successes as f64,
            statistic: None,
            quantiles: Quantiles::of(values),
        }
    }

    /// Claim on a single statistic of the trial values lying in [lo, hi].
    pub fn statistic_in(claim: &str, description: &str, stat: Option<f64>, values: &[f64], lo: f64, hi: f64, required_trials: usize) -> Self {
        let n = values.len();
        let ok = stat.is_some_and(|s| s >= lo && s <= hi);
        let verdict = if n < required_trials || stat.is_none() {
            Verdict::Inconclusive
        } else if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        let margin = stat.map_or(f64::NAN, |s| (s - lo).min(hi - s));
        ClaimVerdict {
            claim: claim.into(),
            description: description.into(),
            verdict,
            trials: n,
            required_trials,
            successes: usize::from(ok),
            required_successes: 1,
            frequency: None,
            threshold: 1.0,
            margin,
            statistic: stat,
            quantiles: Quantiles::of(values),
        }
    }

    /// A check with no sampling (grid sweeps, closed forms).
    pub fn exact(claim: &str, description: &str, checked: usize, failures: usize, statistic: Option<f64>) -> Self {
        let verdict = if checked == 0 {
            Verdict::Inconclusive
        } else if failures == 0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        ClaimVerdict {
            claim: claim.into(),
            description: description.into(),
            verdict,
            trials: checked,
            required_trials: checked.max(1),
            successes: checked - failures,
            required_successes: checked,
            frequency: (checked > 0).then(|| (checked - failures) as f64 / checked as f64),
            threshold: 1.0,
            margin: -(failures as f64),
            statistic,
            quantiles: None,
        }
    }
}

/// Claims evaluated from sweep records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimId {
    TraceResolvent1,
    TraceResolvent2,
    StieltjesTransfer,
    EventEa,
    CondInterval,
    TopEigenvalue,
    GoeNorm,
    OverlapMedian,
    OverlapFloor,
    HansonWright,
    CrossTermSmall,
    BOverlapTrend,
    CgOverlapFloor,
    PotentialBound,
    CgWithinBudget,
    NesterovWithinBudget,
    GdCgRatio,
    CurvesDominate,
}

impl ClaimId {
    pub const ALL: [ClaimId; 18] = [
        ClaimId::TraceResolvent1,
        ClaimId::TraceResolvent2,
        ClaimId::StieltjesTransfer,
        ClaimId::EventEa,
        ClaimId::CondInterval,
        ClaimId::TopEigenvalue,
        ClaimId::GoeNorm,
        ClaimId::OverlapMedian,
        ClaimId::OverlapFloor,
        ClaimId::HansonWright,
        ClaimId::CrossTermSmall,
        ClaimId::BOverlapTrend,
        ClaimId::CgOverlapFloor,
        ClaimId::PotentialBound,
        ClaimId::CgWithinBudget,
        ClaimId::NesterovWithinBudget,
        ClaimId::GdCgRatio,
        ClaimId::CurvesDominate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClaimId::TraceResolvent1 => "trace_resolvent_1",
            ClaimId::TraceResolvent2 => "trace_resolvent_2",
            ClaimId::StieltjesTransfer => "stieltjes_transfer",
            ClaimId::EventEa => "event_ea",
            ClaimId::CondInterval => "cond_interval",
            ClaimId::TopEigenvalue => "top_eigenvalue",
            ClaimId::GoeNorm => "goe_norm",
            ClaimId::OverlapMedian => "overlap_median",
            ClaimId::OverlapFloor => "overlap_floor",
            ClaimId::HansonWright => "hanson_wright",
            ClaimId::CrossTermSmall => "cross_term_small",
            ClaimId::BOverlapTrend => "b_overlap_trend",
            ClaimId::CgOverlapFloor => "cg_overlap_floor",
            ClaimId::PotentialBound => "potential_bound",
            ClaimId::CgWithinBudget => "cg_within_100",
            ClaimId::NesterovWithinBudget => "nesterov_within_100",
            ClaimId::GdCgRatio => "gd_cg_ratio",
            ClaimId::CurvesDominate => "cg_dominates_gd",
        }
    }
}

/// Query allowance for reaching rel_err 0.5 at kappa = 400 (5 sqrt(kappa)).
pub const QUERY_ALLOWANCE: usize = 100;
pub const HALF: f64 = 0.5;

fn rel_dev(x: f64, target: f64) -> f64 {
    ((x - target) / target).abs()
}

fn overlap_floor(lambda: f64, tau0: f64) -> f64 {
    0.5 * tau0 / (3.0 * (lambda - 1.0))
}

fn frequency_over<F>(records: &[TrialRecord], claim: ClaimId, desc: &str, required: usize, threshold: f64, f: F) -> ClaimVerdict
where
    F: Fn(&TrialRecord) -> Option<(bool, f64)>,
{
    let pairs: Vec<(bool, f64)> = records.iter().filter_map(f).collect();
    let outcomes: Vec<bool> = pairs.iter().map(|p| p.0).collect();
    let values: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    ClaimVerdict::frequency(claim.as_str(), desc, &outcomes, &values, required, threshold)
}

fn queries_to_half(r: &TrialRecord, kind: SolverKind) -> Option<Option<usize>> {
    r.solver(kind).map(|s| s.queries_to(HALF))
}

/// Verdict for `claim` over the records that carry the data it needs.
pub fn summarize(records: &[TrialRecord], claim: ClaimId, required_trials: usize) -> ClaimVerdict {
    use ClaimId::*;
    match claim {
        TraceResolvent1 => frequency_over(records, claim, "|tr(gI-W)^-1/d - s(g)| <= 5% of s(g)", required_trials, 0.9, |r| {
            let s = spectral::stieltjes_s(r.gamma).ok()?;
            let dev = rel_dev(r.spectral?.trace_res1?, s);
            Some((dev <= 0.05, dev))
        }),
        TraceResolvent2 => frequency_over(records, claim, "|tr(gI-W)^-2/d - q(g)| <= 15% of q(g)", required_trials, 0.9, |r| {
            let q = spectral::stieltjes_q(r.gamma).ok()?;
            let dev = rel_dev(r.spectral?.trace_res2?, q);
            Some((dev <= 0.15, dev))
        }),
        StieltjesTransfer => frequency_over(records, claim, "concave-transfer bound on the power-2 trace holds", required_trials, 0.9, |r| {
            let t = r.transfer?;
            Some((t.check.ok, t.check.deviation))
        }),
        EventEa => frequency_over(records, claim, "E_A: spectrum of A inside its nu-slack interval", required_trials, 0.95, |r| {
            let s = r.spectral?;
            Some((s.event_ea_holds, s.lam_min_a))
        }),
        CondInterval => frequency_over(records, claim, "cond(A) in [cond_target/2, 2 cond_target]", required_trials, 0.95, |r| {
            let c = r.spectral?.cond_a.unwrap_or(f64::INFINITY);
            Some((c >= r.cond_target / 2.0 && c <= 2.0 * r.cond_target, c))
        }),
        TopEigenvalue => frequency_over(records, claim, "lambda_1(M) within 10% of lambda + 1/lambda", required_trials, 0.95, |r| {
            let t = r.lambda + 1.0 / r.lambda;
            let ratio = r.spectral?.lam1_m / t;
            Some(((0.9..=1.1).contains(&ratio), ratio))
        }),
        GoeNorm => frequency_over(records, claim, "|W|_op <= 2 + 23 d^(-1/3) log^(2/3) d", required_trials, 0.95, |r| {
            let n = r.spectral?.norm_w;
            Some((n <= spectral::goe_norm_bound(r.d), n))
        }),
        OverlapMedian => {
            let ratios: Vec<f64> = records.iter().filter_map(|r| r.decomposition.map(|d| d.empirical / d.predicted)).collect();
            let mut sorted = ratios.clone();
            sorted.sort_by(f64::total_cmp);
            ClaimVerdict::statistic_in(claim.as_str(), "median of empirical/predicted overlap in [0.7, 1.3]", quantile(&sorted, 0.5), &ratios, 0.7, 1.3, required_trials)
        }
        OverlapFloor => frequency_over(records, claim, "<x*/|x*|, u>^2 >= tau0 / (6 (lambda - 1))", required_trials, 0.9, |r| {
            let e = r.decomposition?.empirical;
            Some((e >= overlap_floor(r.lambda, r.tau0), e))
        }),
        HansonWright => frequency_over(records, claim, "|u'Ru - tr(R)/d| <= 0.05", required_trials, 0.9, |r| {
            let dc = r.decomposition?;
            let dev = (dc.u_r1_u - dc.trace_r1).abs();
            Some((dev <= 0.05, dev))
        }),
        CrossTermSmall => frequency_over(records, claim, "|u'Rz| <= 0.05", required_trials, 0.9, |r| {
            let x = r.decomposition?.u_r1_z.abs();
            Some((x <= 0.05, x))
        }),
        BOverlapTrend => {
            let vals: Vec<f64> = records.iter().map(|r| r.b_overlap).collect();
            let target = records.first().map(|r| r.tau0 / (1.0 + r.tau0));
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            let ratio = mean.zip(target).map(|(m, t)| m / t);
            ClaimVerdict::statistic_in(claim.as_str(), "mean <b/|b|, u>^2 within 10% of tau0/(1+tau0)", ratio, &vals, 0.9, 1.1, required_trials)
        }
        CgOverlapFloor => frequency_over(records, claim, "CG with rel_err <= 0.05 has overlap >= tau0 / (6 (lambda - 1))", required_trials, 0.8, |r| {
            let s = r.solver(SolverKind::Cg)?;
            let ov = s.overlap?;
            Some((s.rel_err? <= 0.05 && ov >= overlap_floor(r.lambda, r.tau0), ov))
        }),
        PotentialBound => frequency_over(records, claim, "Phi(V_{T+1}; u) <= 2e tau0 (T+1) for CG", required_trials, 0.9, |r| {
            let s = r.solver(SolverKind::Cg)?;
            let t = s.queries_used? as f64;
            let bound = 2.0 * std::f64::consts::E * r.tau0 * (t + 1.0);
            let phi = s.phi_final?;
            Some((phi <= bound, phi / bound))
        }),
        CgWithinBudget => frequency_over(records, claim, "CG reaches rel_err 0.5 within 100 queries", required_trials, 0.9, |r| {
            let q = queries_to_half(r, SolverKind::Cg)?;
            Some((q.is_some_and(|q| q <= QUERY_ALLOWANCE), q.map_or(f64::INFINITY, |q| q as f64)))
        }),
        NesterovWithinBudget => frequency_over(records, claim, "Nesterov reaches rel_err 0.5 within 100 queries", required_trials, 0.9, |r| {
            let q = queries_to_half(r, SolverKind::Nesterov)?;
            Some((q.is_some_and(|q| q <= QUERY_ALLOWANCE), q.map_or(f64::INFINITY, |q| q as f64)))
        }),
        GdCgRatio => {
            let ratios: Vec<f64> = records
                .iter()
                .filter_map(|r| {
                    let gd = queries_to_half(r, SolverKind::Gd)?;
                    let cg = queries_to_half(r, SolverKind::Cg)??;
                    Some(gd.map_or(f64::INFINITY, |g| g as f64 / cg.max(1) as f64))
                })
                .collect();
            let mut sorted = ratios.clone();
            sorted.sort_by(f64::total_cmp);
            ClaimVerdict::statistic_in(claim.as_str(), "median queries(GD)/queries(CG) to rel_err 0.5 >= 2", quantile(&sorted, 0.5), &ratios, 2.0, f64::INFINITY, required_trials)
        }
        CurvesDominate => frequency_over(records, claim, "CG needs no more queries than GD at every curve threshold", required_trials, 0.9, |r| {
            let cg = r.solver(SolverKind::Cg)?;
            let gd = r.solver(SolverKind::Gd)?;
            let as_cost = |q: Option<usize>| q.map_or(f64::INFINITY, |q| q as f64);
            let worst = cg
                .curve
                .iter()
                .filter_map(|c| gd.curve.iter().find(|g| g.threshold == c.threshold).map(|g| as_cost(c.queries) - as_cost(g.queries)))
                .filter(|x| !x.is_nan())
                .fold(f64::NEG_INFINITY, f64::max);
            Some((worst <= 0.0, worst))
        }),
    }
}
