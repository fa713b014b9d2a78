//! Batch ballot-polling simulations: seeded card orders, per-sim records,
//! aggregate statistics, CSV export, and synthetic contest generators.
//!
//! Card orders are uniform random permutations drawn with ChaCha8 seeded per
//! simulation; `shuffle` is the Fisher-Yates implementation from `rand`.
//! Simulation `c` of every configuration consumes the same order.

use std::io::{Read, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditConfig, AuditError, AuditState, AuditStatus, ContestHeader};
use crate::contest::{Ballot, Candidate, Contest, ContestError, Ranking};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Contest(#[from] ContestError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone)]
pub struct NamedConfig {
    pub label: String,
    pub config: AuditConfig,
}

#[derive(Debug, Clone)]
pub struct SimPlan {
    pub contest: Arc<Contest>,
    pub header: ContestHeader,
    pub configs: Vec<NamedConfig>,
    pub n_sims: usize,
    pub master_seed: u64,
    /// Per-sim wall-clock budget; an audit that runs over counts as a full
    /// hand count.
    pub time_budget: Option<Duration>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl SimPlan {
    pub fn new(contest: Contest, configs: Vec<NamedConfig>, n_sims: usize, master_seed: u64) -> Self {
        let header = ContestHeader::from_contest(&contest);
        SimPlan {
            contest: Arc::new(contest),
            header,
            configs,
            n_sims,
            master_seed,
            time_budget: None,
            jobs: None,
        }
    }

    /// Seed for the card order of simulation `sim`.
    pub fn sim_seed(&self, sim: usize) -> u64 {
        sim_seed(self.master_seed, sim)
    }
}

/// Derives the seed of simulation `sim` from the master seed.
pub fn sim_seed(master_seed: u64, sim: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(sim as u64);
    rng.gen()
}

/// The order in which card indices `0..n` are drawn for `seed`.
pub fn card_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub contest: String,
    pub config: String,
    pub sim: usize,
    pub seed: u64,
    /// Draws to certification, or `B` for a full hand count.
    pub sample_size: u64,
    pub status: AuditStatus,
    pub timed_out: bool,
    pub final_frontier: usize,
    pub max_frontier: usize,
    pub peak_active: usize,
    pub expansions: u64,
    pub hit_cap: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub contest: String,
    pub config: String,
    pub n: usize,
    pub mean_sample_size: f64,
    pub std_err_sample_size: f64,
    pub p50_sample_size: f64,
    pub p99_sample_size: f64,
    pub certification_rate: f64,
    pub mean_final_frontier: f64,
    pub p99_final_frontier: f64,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimResults {
    pub records: Vec<SimRecord>,
    pub aggregates: Vec<Aggregate>,
}

/// Runs one audit over `cards` in the given order until it stops.
pub fn run_one(
    header: &ContestHeader,
    config: AuditConfig,
    cards: &[Ranking],
    order: &[usize],
    time_budget: Option<Duration>,
) -> Result<(AuditState, bool, usize), AuditError> {
    let mut state = AuditState::start(header.clone(), config)?;
    let started = Instant::now();
    let mut max_frontier = state.frontier().len();
    let mut timed_out = false;
    for &i in order {
        let report = state.process_ballot(cards[i].clone())?;
        max_frontier = max_frontier.max(report.frontier_size);
        if report.status.is_terminal() {
            break;
        }
        if let Some(budget) = time_budget {
            if started.elapsed() > budget {
                state.escalate()?;
                timed_out = true;
                break;
            }
        }
    }
    Ok((state, timed_out, max_frontier))
}

pub fn run_simulations(plan: &SimPlan) -> Result<SimResults, SimError> {
    let cards = plan.contest.cards();
    let b = plan.header.total_cards;
    let seeds: Vec<u64> = (0..plan.n_sims).map(|s| plan.sim_seed(s)).collect();
    let jobs: Vec<(usize, usize)> = (0..plan.configs.len())
        .flat_map(|c| (0..plan.n_sims).map(move |s| (c, s)))
        .collect();

    let run = |&(c, sim): &(usize, usize)| -> Result<SimRecord, SimError> {
        let named = &plan.configs[c];
        let order = card_order(cards.len(), seeds[sim]);
        let started = Instant::now();
        let (state, timed_out, max_frontier) =
            run_one(&plan.header, named.config, &cards, &order, plan.time_budget)?;
        let status = state.status();
        Ok(SimRecord {
            contest: plan.contest.name().to_string(),
            config: named.label.clone(),
            sim,
            seed: seeds[sim],
            sample_size: if status == AuditStatus::Certified { state.draws() } else { b },
            status,
            timed_out,
            final_frontier: state.frontier().len(),
            max_frontier,
            peak_active: state.store().peak_active(),
            expansions: state.frontier().expansions(),
            hit_cap: state.frontier().hit_cap(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    };

    let records: Vec<SimRecord> = match plan.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SimError::Pool(e.to_string()))?
            .install(|| jobs.par_iter().map(run).collect::<Result<_, _>>())?,
        None => jobs.par_iter().map(run).collect::<Result<_, _>>()?,
    };
    let aggregates = plan
        .configs
        .iter()
        .filter_map(|named| {
            let rows: Vec<&SimRecord> = records.iter().filter(|r| r.config == named.label).collect();
            aggregate(plan.contest.name(), &named.label, &rows)
        })
        .collect();
    Ok(SimResults { records, aggregates })
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn aggregate(contest: &str, config: &str, rows: &[&SimRecord]) -> Option<Aggregate> {
    if rows.is_empty() {
        return None;
    }
    let sizes: Vec<f64> = rows.iter().map(|r| r.sample_size as f64).collect();
    let frontier: Vec<f64> = rows.iter().map(|r| r.final_frontier as f64).collect();
    let (mean, se) = mean_and_se(&sizes);
    let certified = rows.iter().filter(|r| r.status == AuditStatus::Certified).count();
    Some(Aggregate {
        contest: contest.to_string(),
        config: config.to_string(),
        n: rows.len(),
        mean_sample_size: mean,
        std_err_sample_size: se,
        p50_sample_size: percentile(&sizes, 50.0),
        p99_sample_size: percentile(&sizes, 99.0),
        certification_rate: certified as f64 / rows.len() as f64,
        mean_final_frontier: mean_and_se(&frontier).0,
        p99_final_frontier: percentile(&frontier, 99.0),
        mean_wall_ms: rows.iter().map(|r| r.wall_ms).sum::<f64>() / rows.len() as f64,
    })
}

/// CSV columns. `kind` is `sim` for per-simulation rows and `aggregate` for
/// summary rows; each row kind leaves the other kind's columns empty.
pub const CSV_HEADER: [&str; 23] = [
    "kind",
    "contest",
    "config",
    "sim",
    "seed",
    "sample_size",
    "status",
    "timed_out",
    "final_frontier",
    "max_frontier",
    "peak_active",
    "expansions",
    "hit_cap",
    "wall_ms",
    "n",
    "mean_sample_size",
    "std_err_sample_size",
    "p50_sample_size",
    "p99_sample_size",
    "certification_rate",
    "mean_final_frontier",
    "p99_final_frontier",
    "mean_wall_ms",
];

fn status_str(s: AuditStatus) -> &'static str {
    match s {
        AuditStatus::Running => "running",
        AuditStatus::Certified => "certified",
        AuditStatus::FullHandCount => "full_hand_count",
    }
}

pub fn export_results<W: Write>(results: &SimResults, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let blank = |n: usize| std::iter::repeat_n(String::new(), n);
    for r in &results.records {
        let mut row = vec![
            "sim".to_string(),
            r.contest.clone(),
            r.config.clone(),
            r.sim.to_string(),
            r.seed.to_string(),
            r.sample_size.to_string(),
            status_str(r.status).to_string(),
            r.timed_out.to_string(),
            r.final_frontier.to_string(),
            r.max_frontier.to_string(),
            r.peak_active.to_string(),
            r.expansions.to_string(),
            r.hit_cap.to_string(),
            r.wall_ms.to_string(),
        ];
        row.extend(blank(9));
        w.write_record(&row)?;
    }
    for a in &results.aggregates {
        let mut row = vec!["aggregate".to_string(), a.contest.clone(), a.config.clone()];
        row.extend(blank(11));
        row.extend([
            a.n.to_string(),
            a.mean_sample_size.to_string(),
            a.std_err_sample_size.to_string(),
            a.p50_sample_size.to_string(),
            a.p99_sample_size.to_string(),
            a.certification_rate.to_string(),
            a.mean_final_frontier.to_string(),
            a.p99_final_frontier.to_string(),
            a.mean_wall_ms.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads back the aggregate rows written by [`export_results`].
pub fn read_aggregates<R: Read>(input: R) -> Result<Vec<Aggregate>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    let parse = |s: &str| -> Result<f64, SimError> {
        s.parse::<f64>()
            .map_err(|e| SimError::Csv(csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, e))))
    };
    for row in r.records() {
        let row = row?;
        if &row[0] != "aggregate" {
            continue;
        }
        out.push(Aggregate {
            contest: row[1].to_string(),
            config: row[2].to_string(),
            n: parse(&row[14])? as usize,
            mean_sample_size: parse(&row[15])?,
            std_err_sample_size: parse(&row[16])?,
            p50_sample_size: parse(&row[17])?,
            p99_sample_size: parse(&row[18])?,
            certification_rate: parse(&row[19])?,
            mean_final_frontier: parse(&row[20])?,
            p99_final_frontier: parse(&row[21])?,
            mean_wall_ms: parse(&row[22])?,
        });
    }
    Ok(out)
}

/// Appends `n` candidates that no ballot mentions.
pub fn add_fake_candidates(contest: &Contest, n: usize) -> Result<Contest, ContestError> {
    if n == 0 {
        return Ok(contest.clone());
    }
    let mut candidates = contest.candidates().to_vec();
    let mut next = 1;
    while candidates.len() < contest.num_candidates() + n {
        let label = format!("Fake{next}");
        next += 1;
        if !candidates.contains(&label) {
            candidates.push(label);
        }
    }
    Contest::new(contest.name(), candidates, contest.ballots().to_vec())
}

/// Two front-runners `A` and `B` plus `k - 2` minor candidates.
///
/// The minors together hold `minor_share` of the first preferences, in
/// distinct decreasing amounts. Each minor's cards transfer evenly to `A` and
/// `B` with a remainder exhausting, so the final round is `A` against `B`.
///
/// `diluted_margin` is the margin in cards over `total_cards`, where the
/// margin in cards is the number of cards that must change to overturn the
/// result. Moving one card from `A` to `B` closes the gap by two, so `A` leads
/// the final round by `2 * round(diluted_margin * total_cards)` cards.
pub fn synthetic_contest(
    name: &str,
    num_candidates: usize,
    total_cards: u64,
    diluted_margin: f64,
    minor_share: f64,
) -> Result<Contest, ContestError> {
    if num_candidates < 2 {
        return Err(ContestError::TooFewCandidates(num_candidates));
    }
    let minors = num_candidates - 2;
    let mut lead = 2 * (diluted_margin * total_cards as f64).round() as u64;
    let mut minor_total = if minors == 0 {
        0
    } else {
        (minor_share * total_cards as f64).round() as u64
    };
    // a + b and a - b must have the same parity
    if (total_cards - minor_total) % 2 != lead % 2 {
        if minor_total > 0 {
            minor_total -= 1;
        } else if minors > 0 {
            minor_total += 1;
        } else {
            lead += 1;
        }
    }
    let front = total_cards - minor_total;
    let a = (front + lead) / 2;
    let b = front - a;

    let mut candidates = vec!["A".to_string(), "B".to_string()];
    candidates.extend((1..=minors).map(|i| format!("M{i}")));
    let mut ballots = vec![Ballot::new(vec![0, 1], a), Ballot::new(vec![1, 0], b)];

    // weights minors, minors-1, ..., 1
    let weight_total = (minors * (minors + 1) / 2) as u64;
    let mut assigned = 0;
    for i in 0..minors {
        let weight = (minors - i) as u64;
        let share = if i + 1 == minors {
            minor_total - assigned
        } else {
            minor_total * weight / weight_total.max(1)
        };
        assigned += share;
        let m: Candidate = 2 + i;
        let each = share * 9 / 20;
        let exhaust = share - 2 * each;
        for (ranking, count) in [(vec![m, 0], each), (vec![m, 1], each), (vec![m], exhaust)] {
            if count > 0 {
                ballots.push(Ballot::new(ranking, count));
            }
        }
    }
    Contest::new(name, candidates, ballots)
}
