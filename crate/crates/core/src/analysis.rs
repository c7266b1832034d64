//! Statistical checks on beacon output and reveal positions, plus affine fits
//! over cost sweeps.
//!
//! Honest rounds are sampled through [`honest_round`], which derives the same
//! secrets the simulator's operators would use and evaluates the round
//! arithmetic directly. A full simulation of an honest round finalizes with
//! exactly this output, so the statistics describe the simulated beacon at a
//! fraction of the cost.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beacon::{derive_round, BeaconError, RoundDerivation};
use crate::crypto::{Address, CommitmentChain, Digest32, Secret};
use crate::ledger::{CostMeter, Ledger, LedgerConfig, LedgerError, Mode, RoundId};
use crate::simulator::{operator_secret, seeded_rng, SweepRow};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("a fit needs at least 3 distinct n values, got {distinct}")]
    NotEnoughPoints { distinct: usize },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Beacon(#[from] BeaconError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

fn invalid(msg: impl Into<String>) -> AnalysisError {
    AnalysisError::InvalidParameters(msg.into())
}

/// Round `round` of an all-honest run with `n` operators and scenario seed `seed`.
pub fn honest_round(seed: u64, n: usize, round: RoundId) -> Result<RoundDerivation, BeaconError> {
    let secrets: Vec<Secret> = (0..n).map(|i| operator_secret(seed, i, round, 0)).collect();
    derive_round(&secrets)
}

pub fn honest_output(seed: u64, n: usize, round: RoundId) -> Result<Digest32, BeaconError> {
    honest_round(seed, n, round).map(|d| d.omega_o)
}

/// Bit `i` of a digest, most significant bit of byte 0 first.
pub fn bit(digest: &Digest32, i: usize) -> bool {
    digest.0[i / 8] >> (7 - i % 8) & 1 == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitBiasReport {
    pub n: usize,
    pub seed: u64,
    pub sample_count: u64,
    pub ones: Vec<u64>,
    pub per_bit_frequency: Vec<f64>,
    pub max_deviation: f64,
}

impl BitBiasReport {
    pub fn from_outputs<'a>(n: usize, seed: u64, outputs: impl IntoIterator<Item = &'a Digest32>) -> Self {
        let mut ones = vec![0u64; 256];
        let mut sample_count = 0;
        for d in outputs {
            sample_count += 1;
            for (i, count) in ones.iter_mut().enumerate() {
                *count += bit(d, i) as u64;
            }
        }
        let per_bit_frequency: Vec<f64> = ones
            .iter()
            .map(|&c| {
                if sample_count == 0 {
                    0.0
                } else {
                    c as f64 / sample_count as f64
                }
            })
            .collect();
        let max_deviation = per_bit_frequency.iter().map(|f| (f - 0.5).abs()).fold(0.0, f64::max);
        Self {
            n,
            seed,
            sample_count,
            ones,
            per_bit_frequency,
            max_deviation,
        }
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.max_deviation <= tolerance
    }
}

/// Per-bit means of `Ω_o` over rounds `0..rounds` of an honest run.
pub fn bias_test(rounds: u64, n: usize, seed: u64) -> Result<BitBiasReport, AnalysisError> {
    if rounds == 0 {
        return Err(invalid("bias test needs at least one round"));
    }
    let outputs = (0..rounds)
        .map(|r| honest_output(seed, n, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BitBiasReport::from_outputs(n, seed, &outputs))
}

/// [`bias_test`] for several seeds in parallel, reports in seed order.
pub fn bias_suite(seeds: &[u64], rounds: u64, n: usize) -> Result<Vec<BitBiasReport>, AnalysisError> {
    seeds.par_iter().map(|&s| bias_test(rounds, n, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastPositionReport {
    pub n: usize,
    pub k: usize,
    pub rounds: u64,
    pub hits: u64,
    pub frequency: f64,
    pub expected: f64,
}

/// How often one of the operators `0..k` reveals last.
pub fn last_position_test(rounds: u64, n: usize, k: usize, seed: u64) -> Result<LastPositionReport, AnalysisError> {
    if rounds == 0 || k >= n {
        return Err(invalid(format!(
            "need rounds ≥ 1 and k < n, got rounds={rounds} k={k} n={n}"
        )));
    }
    let mut hits = 0;
    for r in 0..rounds {
        let last = honest_round(seed, n, r)?.order.last().expect("n ≥ 2");
        hits += (last < k) as u64;
    }
    Ok(LastPositionReport {
        n,
        k,
        rounds,
        hits,
        frequency: hits as f64 / rounds as f64,
        expected: k as f64 / n as f64,
    })
}

/// Empirical operator-by-position frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionReport {
    pub n: usize,
    pub rounds: u64,
    /// `counts[operator][position]`
    pub counts: Vec<Vec<u64>>,
}

impl PositionReport {
    pub fn frequency(&self, operator: usize, position: usize) -> f64 {
        self.counts[operator][position] as f64 / self.rounds as f64
    }

    /// Largest distance of any cell from `1/n`.
    pub fn max_cell_deviation(&self) -> f64 {
        let uniform = 1.0 / self.n as f64;
        (0..self.n)
            .flat_map(|o| (0..self.n).map(move |p| (o, p)))
            .map(|(o, p)| (self.frequency(o, p) - uniform).abs())
            .fold(0.0, f64::max)
    }
}

pub fn position_matrix(rounds: u64, n: usize, seed: u64) -> Result<PositionReport, AnalysisError> {
    if rounds == 0 {
        return Err(invalid("position matrix needs at least one round"));
    }
    let mut counts = vec![vec![0u64; n]; n];
    for r in 0..rounds {
        let order = honest_round(seed, n, r)?.order;
        for (position, &operator) in order.permutation.iter().enumerate() {
            counts[operator][position] += 1;
        }
    }
    Ok(PositionReport { n, rounds, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrindReport {
    pub n: usize,
    pub adversary: usize,
    pub budget: u32,
    pub trials: u64,
    pub successes: u64,
    pub frequency: f64,
    pub expected: f64,
    /// Post-commit substitutions tried against a ledger.
    pub post_commit_attempts: u64,
    pub post_commit_rejections: u64,
    /// Checked trials whose final reveal order matched the committed secret.
    pub post_commit_order_unchanged: u64,
}

/// Closed-form last-position probability with `budget` independent draws.
pub fn grind_expectation(n: usize, budget: u32) -> f64 {
    1.0 - (1.0 - 1.0 / n as f64).powi(budget as i32)
}

/// Trials that also replay the commitment against a ledger.
pub const POST_COMMIT_CHECKS: u64 = 64;

/// An adversary at activation index `adversary` draws up to `budget` candidate
/// secrets before committing and keeps the first that puts it last, knowing
/// every other operator's secret. Once its outer commitment is on the ledger,
/// any substitute is refused.
pub fn grind_resistance_probe(
    trials: u64,
    n: usize,
    adversary: usize,
    budget: u32,
    seed: u64,
) -> Result<GrindReport, AnalysisError> {
    if trials == 0 || budget == 0 || adversary >= n || n < 2 {
        return Err(invalid(format!(
            "need trials ≥ 1, budget ≥ 1, n ≥ 2 and adversary < n, got trials={trials} budget={budget} n={n} adversary={adversary}"
        )));
    }
    let harness = PostCommitHarness::new(n);
    let mut successes = 0;
    let mut attempts = 0;
    let mut rejections = 0;
    let mut unchanged = 0;
    for trial in 0..trials {
        let mut secrets: Vec<Secret> = (0..n).map(|i| operator_secret(seed, i, trial, 0)).collect();
        let mut rng = seeded_rng(b"cr2/grind", &[seed, trial, adversary as u64]);
        let mut draw = || {
            let mut s = [0u8; 32];
            rng.fill_bytes(&mut s);
            Secret(s)
        };
        let mut landed = false;
        for _ in 0..budget {
            secrets[adversary] = draw();
            if derive_round(&secrets)?.order.last() == Some(adversary) {
                landed = true;
                break;
            }
        }
        successes += landed as u64;

        if trial < POST_COMMIT_CHECKS {
            let substitute = draw();
            let outcome = harness.substitute_after_commit(&secrets, adversary, substitute)?;
            attempts += 1;
            rejections += outcome.rejected as u64;
            unchanged += outcome.order_unchanged as u64;
        }
    }
    Ok(GrindReport {
        n,
        adversary,
        budget,
        trials,
        successes,
        frequency: successes as f64 / trials as f64,
        expected: grind_expectation(n, budget),
        post_commit_attempts: attempts,
        post_commit_rejections: rejections,
        post_commit_order_unchanged: unchanged,
    })
}

struct PostCommitOutcome {
    rejected: bool,
    order_unchanged: bool,
}

struct PostCommitHarness {
    leader: Address,
    consumer: Address,
    operators: Vec<Address>,
}

impl PostCommitHarness {
    fn new(n: usize) -> Self {
        let addr = |tag: u8, i: usize| {
            let mut a = [0u8; 20];
            a[0] = tag;
            a[12..].copy_from_slice(&(i as u64).to_be_bytes());
            Address(a)
        };
        Self {
            leader: addr(0x1e, 0),
            consumer: addr(0xc0, 0),
            operators: (0..n).map(|i| addr(0x0b, i)).collect(),
        }
    }

    /// Runs an on-chain-mode round where the adversary tries to open its
    /// commitment with `substitute`, then with its committed secret.
    fn substitute_after_commit(
        &self,
        secrets: &[Secret],
        adversary: usize,
        substitute: Secret,
    ) -> Result<PostCommitOutcome, AnalysisError> {
        let config = LedgerConfig {
            mode: Mode::OnChain,
            ..LedgerConfig::default()
        };
        let deposit = config.min_deposit.max(config.min_leader_deposit);
        let mut ledger = Ledger::new(config, self.leader, deposit)?;
        for &op in &self.operators {
            ledger.deposit_and_activate(op, deposit)?;
        }
        let round = ledger.request_random_number(self.consumer, 0)?;
        let committed = derive_round(secrets)?;
        for (i, &op) in self.operators.iter().enumerate() {
            ledger.submit_cv(op, round, committed.outers[i])?;
        }
        let me = self.operators[adversary];
        let fake = CommitmentChain::from_secret(substitute);
        let rejected = matches!(
            ledger.submit_co(me, round, fake.inner),
            Err(LedgerError::CommitmentMismatch { .. })
        );
        for (i, &op) in self.operators.iter().enumerate() {
            ledger.submit_co(op, round, committed.inners[i])?;
        }
        ledger.submit_reveal_order(
            self.operators[committed.order.permutation[0]],
            round,
            committed.order.clone(),
        )?;
        let stored = ledger.round(round).and_then(|r| r.reveal_order.clone());
        Ok(PostCommitOutcome {
            rejected,
            order_unchanged: stored.as_ref() == Some(&committed.order),
        })
    }
}

/// Least-squares line of one counter against n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterFit {
    pub counter: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Largest `|(y₂−y₁)(x₁−x₀) − (y₁−y₀)(x₂−x₁)|` over neighbouring points;
    /// the plain second difference when n is unit-spaced.
    pub max_second_difference: i64,
}

impl CounterFit {
    pub fn exactly_affine(&self) -> bool {
        self.max_second_difference == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub ns: Vec<usize>,
    pub fits: Vec<CounterFit>,
}

impl CostReport {
    pub fn fit(&self, counter: &str) -> Option<&CounterFit> {
        self.fits.iter().find(|f| f.counter == counter)
    }
}

fn fit_counter(counter: &str, xs: &[i128], ys: &[i128]) -> CounterFit {
    let m = xs.len() as i128;
    let sx: i128 = xs.iter().sum();
    let sy: i128 = ys.iter().sum();
    let sxx: i128 = xs.iter().map(|x| x * x).sum();
    let syy: i128 = ys.iter().map(|y| y * y).sum();
    let sxy: i128 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let dxx = m * sxx - sx * sx;
    let dxy = m * sxy - sx * sy;
    let dyy = m * syy - sy * sy;
    let slope = dxy as f64 / dxx as f64;
    let intercept = (sy as f64 - slope * sx as f64) / m as f64;
    // r² = dxy² / (dxx·dyy); equal integers give exactly 1.0.
    let r_squared = if dyy == 0 {
        1.0
    } else {
        (dxy * dxy) as f64 / (dxx * dyy) as f64
    };
    let max_second_difference = (2..xs.len())
        .map(|i| {
            let (x0, x1, x2) = (xs[i - 2], xs[i - 1], xs[i]);
            let (y0, y1, y2) = (ys[i - 2], ys[i - 1], ys[i]);
            ((y2 - y1) * (x1 - x0) - (y1 - y0) * (x2 - x1)).abs()
        })
        .max()
        .unwrap_or(0);
    CounterFit {
        counter: counter.to_owned(),
        slope,
        intercept,
        r_squared,
        max_second_difference: i64::try_from(max_second_difference).unwrap_or(i64::MAX),
    }
}

/// Affine fit of every counter, and of the counter total, against n.
pub fn cost_report(rows: &[SweepRow]) -> Result<CostReport, AnalysisError> {
    let mut rows: Vec<&SweepRow> = rows.iter().collect();
    rows.sort_by_key(|r| r.n);
    rows.dedup_by_key(|r| r.n);
    if rows.len() < 3 {
        return Err(AnalysisError::NotEnoughPoints { distinct: rows.len() });
    }
    let xs: Vec<i128> = rows.iter().map(|r| r.n as i128).collect();
    let mut fits: Vec<CounterFit> = CostMeter::COUNTER_NAMES
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let ys: Vec<i128> = rows.iter().map(|r| r.meter.counters()[c] as i128).collect();
            fit_counter(name, &xs, &ys)
        })
        .collect();
    let totals: Vec<i128> = rows.iter().map(|r| r.meter.total() as i128).collect();
    fits.push(fit_counter("total", &xs, &totals));
    Ok(CostReport {
        ns: rows.iter().map(|r| r.n).collect(),
        fits,
    })
}

/// Per-n counter differences `lhs − rhs`; both sweeps must cover the same n
/// and `lhs` must dominate every counter.
pub fn premium(lhs: &[SweepRow], rhs: &[SweepRow]) -> Result<Vec<SweepRow>, AnalysisError> {
    lhs.iter()
        .map(|l| {
            let r = rhs
                .iter()
                .find(|r| r.n == l.n)
                .ok_or_else(|| invalid(format!("n={} missing from the subtrahend sweep", l.n)))?;
            let (a, b) = (l.meter.counters(), r.meter.counters());
            if a.iter().zip(&b).any(|(x, y)| x < y) {
                return Err(invalid(format!("n={}: premium would be negative", l.n)));
            }
            Ok(SweepRow {
                n: l.n,
                calls: Vec::new(),
                meter: l.meter - r.meter,
            })
        })
        .collect()
}
