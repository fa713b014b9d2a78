//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use awaire::alpha::{AlphaParams, BaseTsm, TsmStatus};
use awaire::audit::{AuditConfig, AuditState, AuditStatus, ContestHeader};
use awaire::contest::{alt_order_count, tabulate_irv, Contest};
use awaire::frontier::{suffix_covers, ExpansionPolicy, Lookahead, Trigger};
use awaire::requirement::{mean_assorter, requirement_true, AssorterValue};
use awaire::sim::{add_fake_candidates, card_order, mean_and_se, run_simulations, synthetic_contest, NamedConfig, SimPlan};
use common::{Profile, Req};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const ALPHA: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn named(label: &str, config: AuditConfig) -> NamedConfig {
    NamedConfig {
        label: label.into(),
        config,
    }
}

fn random_policy<R: Rng>(rng: &mut R) -> ExpansionPolicy {
    let trigger = if rng.gen_bool(0.5) {
        Trigger::Every(rng.gen_range(1..20))
    } else {
        Trigger::Below([0.9, 1.0, 2.0][rng.gen_range(0..3)])
    };
    let lookahead = if rng.gen_bool(0.5) {
        Lookahead::Loose
    } else {
        Lookahead::Tight([1.0, 1.6487, 3.0][rng.gen_range(0..3)])
    };
    ExpansionPolicy { trigger, lookahead }
}

fn random_contest(rng: &mut ChaCha8Rng, k: usize, max_cards: u64) -> (Profile, Contest) {
    let p = common::random_profile(rng, k, max_cards);
    let c = common::to_contest("r", k, &p);
    (p, c)
}

fn counting_and_partition() -> Outcome {
    let counts_ok = alt_order_count(4).unwrap() == 18 && alt_order_count(5).unwrap() == 96;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0C0);
    let mut violations = 0;
    let mut checks = 0u64;
    for _ in 0..100 {
        let k = rng.gen_range(3..=5);
        let (_, contest) = random_contest(&mut rng, k, 200);
        let config = AuditConfig {
            policy: random_policy(&mut rng),
            abandonment: rng.gen_bool(0.5),
            ..AuditConfig::default()
        };
        let header = ContestHeader::from_contest(&contest);
        let winner = header.reported_winner;
        let mut state = AuditState::start(header, config).unwrap();
        let cards = contest.cards();
        let prefix = rng.gen_range(1..=cards.len());
        let orders = common::permutations(k);
        for i in card_order(cards.len(), rng.gen()).into_iter().take(prefix) {
            if state.status().is_terminal() {
                break;
            }
            state.process_ballot(cards[i].clone()).unwrap();
            let f = state.frontier();
            for order in &orders {
                let hits = f
                    .nodes()
                    .iter()
                    .map(|n| n.suffix.as_slice())
                    .chain(f.pruned().iter().map(Vec::as_slice))
                    .filter(|s| suffix_covers(s, order))
                    .count();
                checks += 1;
                if hits != usize::from(*order.last().unwrap() != winner) {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        counts_ok && violations == 0,
        format!(
            "alt_order_count(4)={}, alt_order_count(5)={}; {checks} order checks over 100 prefixes, {violations} violations",
            alt_order_count(4).unwrap(),
            alt_order_count(5).unwrap()
        ),
    )
}

fn assorter_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA55);
    let mut checked = 0u64;
    let mut mismatches = 0u64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=5);
        let (p, contest) = random_contest(&mut rng, k, 200);
        let b = contest.total_cards();
        for req in all_requirements(k) {
            let lib = req.to_lib();
            let truth = common::truth(&p, k, &req);
            let twice = mean_assorter(&lib, &contest).twice_sum;
            let by_mean = if twice == b {
                matches!(req, Req::Dnd(..))
            } else {
                twice < b
            };
            checked += 1;
            if requirement_true(&lib, &contest) != truth || by_mean != truth {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{checked} requirements over 1000 contests, {mismatches} mismatches"))
}

fn all_requirements(k: usize) -> Vec<Req> {
    let mut out = Vec::new();
    for i in 0..k {
        for j in (0..k).filter(|&j| j != i) {
            out.push(Req::Dnd(i, j));
            for bits in 0u32..(1 << k) {
                let s: BTreeSet<usize> = (0..k).filter(|c| bits >> c & 1 == 1).collect();
                if s.contains(&i) && s.contains(&j) {
                    out.push(Req::Db(i, j, s));
                }
            }
        }
    }
    out
}

fn ville() -> Outcome {
    // DB(A, B, {A, B}) holds by one card; C's cards exhaust within {A, B}.
    let p: Profile = vec![(vec![0], 900), (vec![1], 899), (vec![2], 201)];
    let contest = common::to_contest("ville", 3, &p);
    let req = Req::Db(0, 1, [0, 1].into_iter().collect());
    let lib = req.to_lib();
    assert!(requirement_true(&lib, &contest));
    let values: Vec<AssorterValue> = contest.cards().iter().map(|c| awaire::assort(&lib, c)).collect();
    let b = values.len() as u64;
    let n = 20_000usize;
    let checkpoints = [100usize, 500, 2000];
    let mut details = Vec::new();
    let mut pass = true;
    for eta0 in [0.51, 0.75] {
        let params = AlphaParams::new(eta0, 200.0).unwrap();
        let paths: Vec<(bool, [f64; 3])> = (0..n)
            .into_par_iter()
            .map(|s| {
                let order = card_order(values.len(), 0x5111_0000 + s as u64);
                let mut tsm = BaseTsm::new(params, b).unwrap();
                let mut crossed = false;
                let mut at = [0.0; 3];
                for (t, &i) in order.iter().enumerate() {
                    if tsm.status() == TsmStatus::Active {
                        tsm.update(values[i]).unwrap();
                    }
                    crossed |= tsm.value() >= 1.0 / ALPHA;
                    if let Some(c) = checkpoints.iter().position(|&c| c == t + 1) {
                        at[c] = tsm.value();
                    }
                }
                (crossed, at)
            })
            .collect();
        let rate = paths.iter().filter(|p| p.0).count() as f64 / n as f64;
        let rate_se = (ALPHA * (1.0 - ALPHA) / n as f64).sqrt();
        let rate_ok = rate <= ALPHA + 3.0 * rate_se;
        let mut means = Vec::new();
        let mut means_ok = true;
        for c in 0..3 {
            let xs: Vec<f64> = paths.iter().map(|p| p.1[c]).collect();
            let (m, se) = mean_and_se(&xs);
            means_ok &= m <= 1.0 + 3.0 * se;
            means.push(format!("E[M_{}]={m:.4}(se {se:.4})", checkpoints[c]));
        }
        pass &= rate_ok && means_ok;
        details.push(format!(
            "eta0={eta0}: P(sup M>=20)={rate:.4} (bound {:.4}), {}",
            ALPHA + 3.0 * rate_se,
            means.join(", ")
        ));
    }
    outcome(pass, format!("B=2000, {n} orders; {}", details.join("; ")))
}

fn risk_limit() -> Outcome {
    let n = 2000;
    let mut pass = true;
    let mut details = Vec::new();
    for k in [3usize, 4, 5] {
        // A leads B by two cards in the last round; B is reported as the winner.
        let contest = synthetic_contest(&format!("adversarial-k{k}"), k, 2000, 0.0005, 0.2).unwrap();
        let tab = tabulate_irv(&contest);
        assert_eq!(tab.winner(), 0);
        let mut plan = SimPlan::new(
            contest,
            vec![
                named("abandon", AuditConfig::default()),
                named(
                    "no-abandon",
                    AuditConfig {
                        abandonment: false,
                        ..AuditConfig::default()
                    },
                ),
            ],
            n,
            0xADE0 + k as u64,
        );
        plan.header = plan.header.clone().with_reported_winner(1);
        let res = run_simulations(&plan).unwrap();
        let rate = |label: &str| {
            res.records
                .iter()
                .filter(|r| r.config == label && r.status == AuditStatus::Certified)
                .count() as f64
                / n as f64
        };
        let (with, without) = (rate("abandon"), rate("no-abandon"));
        let bound = ALPHA + 3.0 * (ALPHA * (1.0 - ALPHA) / n as f64).sqrt();
        let pooled = (with + without) / 2.0;
        let diff_tol = 3.0 * (2.0 * pooled * (1.0 - pooled) / n as f64).sqrt();
        let ok = with <= bound && without <= bound && (with - without).abs() <= diff_tol;
        pass &= ok;
        details.push(format!("k={k}: certified {with:.4} / {without:.4} without abandonment"));
    }
    outcome(
        pass,
        format!(
            "{n} sims per contest, bound {:.4}; {}",
            ALPHA + 3.0 * (ALPHA * (1.0 - ALPHA) / n as f64).sqrt(),
            details.join("; ")
        ),
    )
}

fn power() -> Outcome {
    let margins = [0.01, 0.05, 0.10, 0.20];
    let mut means = Vec::new();
    let mut details = Vec::new();
    for &m in &margins {
        let contest = synthetic_contest(&format!("margin-{m}"), 5, 45_000, m, 0.2).unwrap();
        let plan = SimPlan::new(contest, vec![named("default", AuditConfig::default())], 500, 0x9000);
        let res = run_simulations(&plan).unwrap();
        let a = &res.aggregates[0];
        means.push(a.mean_sample_size);
        details.push(format!("{:.0}%: {:.1} (se {:.1})", m * 100.0, a.mean_sample_size, a.std_err_sample_size));
    }
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let last = means[3];
    outcome(
        decreasing && (30.0..=300.0).contains(&last),
        format!("k=5, B=45000, 500 sims; mean sample size {}", details.join(", ")),
    )
}

fn scalability() -> Outcome {
    let base = synthetic_contest("stress", 5, 10_000, 0.10, 0.2).unwrap();
    let contest = add_fake_candidates(&base, 50).unwrap();
    let winner_kept = tabulate_irv(&contest).winner() == tabulate_irv(&base).winner();
    let plan = SimPlan::new(contest, vec![named("default", AuditConfig::default())], 20, 0x55);
    let started = Instant::now();
    let res = run_simulations(&plan).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let draws: u64 = res.records.iter().map(|r| r.sample_size).sum();
    let per_ballot: f64 = res.records.iter().map(|r| r.wall_ms).sum::<f64>() / 1e3 / draws as f64;
    let capped = res.records.iter().any(|r| r.hit_cap);
    let max_final = res.records.iter().map(|r| r.final_frontier).max().unwrap();
    let max_seen = res.records.iter().map(|r| r.max_frontier).max().unwrap();
    let complete = res.records.iter().all(|r| r.status.is_terminal());
    outcome(
        winner_kept && complete && !capped && max_final <= 10_000 && per_ballot < 1.0,
        format!(
            "k=55, B=10000, 20 sims in {elapsed:.2}s; max final frontier {max_final}, max frontier {max_seen}, cap hit {capped}, {:.3} ms per ballot",
            per_ballot * 1e3
        ),
    )
}

#[derive(Debug, PartialEq)]
struct Decision {
    status: AuditStatus,
    nodes: BTreeSet<(Vec<usize>, u64)>,
    pruned: usize,
}

fn decision(state: &AuditState) -> Decision {
    Decision {
        status: state.status(),
        nodes: state
            .frontier()
            .nodes()
            .iter()
            .map(|n| (n.suffix.clone(), n.log_i.to_bits()))
            .collect(),
        pruned: state.frontier().pruned().len(),
    }
}

fn caching_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCAC4E);
    let mut diverged = 0;
    let mut draws = 0u64;
    let mut restores = 0u64;
    for _ in 0..100 {
        let k = rng.gen_range(3..=5);
        let (_, contest) = random_contest(&mut rng, k, 300);
        let cards = contest.cards();
        let header = ContestHeader::from_contest(&contest);
        let policy = random_policy(&mut rng);
        let plain = AuditConfig {
            policy,
            parking: false,
            ..AuditConfig::default()
        };
        let cached = AuditConfig { parking: true, ..plain };
        let mut a = AuditState::start(header.clone(), plain).unwrap();
        let mut b = AuditState::start(header, cached).unwrap();
        let restore_p = rng.gen_range(0.01..0.2);
        for i in card_order(cards.len(), rng.gen()) {
            if a.status().is_terminal() || b.status().is_terminal() {
                break;
            }
            if rng.gen_bool(restore_p) {
                b = AuditState::restore(&b.snapshot()).unwrap();
                restores += 1;
            }
            a.process_ballot(cards[i].clone()).unwrap();
            b.process_ballot(cards[i].clone()).unwrap();
            draws += 1;
            let mut same = decision(&a) == decision(&b);
            // every watched requirement still in use is current in both runs;
            // abandoned ones are frozen wherever they stood and never read
            for node in b.frontier().nodes() {
                for &id in &node.watchlist {
                    let e = b.store().entry(id);
                    if e.is_abandoned() {
                        continue;
                    }
                    let other = a.store().id_of(&e.req).map(|o| a.store().entry(o));
                    same &= other.is_some_and(|o| o.tsm.log_m().to_bits() == e.tsm.log_m().to_bits());
                }
            }
            if !same {
                diverged += 1;
                break;
            }
        }
    }
    outcome(
        diverged == 0,
        format!("100 schedules, {draws} draws, {restores} snapshot restores, {diverged} divergent schedules"),
    )
}

fn brute_force_cross_check() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (m, seed) in [(0.10, 0xB0u64), (0.05, 0xB1)] {
        let contest = synthetic_contest(&format!("k4-{m}"), 4, 5000, m, 0.2).unwrap();
        let profile = common::profile_of(&contest);
        let winner = tabulate_irv(&contest).winner();
        let cards = contest.cards();
        let header = ContestHeader::from_contest(&contest);
        let sims = 100;
        let results: Vec<(Option<u64>, Option<u64>)> = (0..sims)
            .into_par_iter()
            .map(|s| {
                let order = card_order(cards.len(), awaire::sim::sim_seed(seed, s));
                let drawn: Vec<Vec<usize>> = order.iter().map(|&i| cards[i].to_vec()).collect();
                let oracle = common::brute_force_audit(&profile, 4, winner, &drawn, ALPHA, 0.51, 200.0);
                let mut state = AuditState::start(header.clone(), AuditConfig::default()).unwrap();
                let mut lazy = None;
                for &i in &order {
                    let r = state.process_ballot(cards[i].clone()).unwrap();
                    if r.status == AuditStatus::Certified {
                        lazy = Some(r.t);
                    }
                    if r.status.is_terminal() {
                        break;
                    }
                }
                (oracle, lazy)
            })
            .collect();
        let both = results.iter().all(|(o, v)| o.is_some() && v.is_some());
        let mean = |f: &dyn Fn(&(Option<u64>, Option<u64>)) -> Option<u64>| {
            results.iter().map(|r| f(r).unwrap_or(5000) as f64).sum::<f64>() / sims as f64
        };
        let (oracle_mean, lazy_mean) = (mean(&|r| r.0), mean(&|r| r.1));
        let ratio = lazy_mean / oracle_mean;
        pass &= both && (0.5..=2.0).contains(&ratio);
        details.push(format!(
            "margin {:.0}%: oracle mean {oracle_mean:.1}, lazy mean {lazy_mean:.1}, ratio {ratio:.3}, all certified {both}",
            m * 100.0
        ));
    }
    outcome(pass, format!("k=4, 18 alt-orders, 200 sims; {}", details.join("; ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("counting identities and frontier partition", counting_and_partition),
        ("assorter and truth-oracle equivalence", assorter_equivalence),
        ("supermartingale and Ville validation", ville),
        ("risk limit on adversarial contests", risk_limit),
        ("power and monotonicity in margin", power),
        ("scalability with 50 fake candidates", scalability),
        ("caching exactness under parking and snapshots", caching_exactness),
        ("brute-force cross-check for k=4", brute_force_cross_check),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let Outcome { pass, detail } = run();
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
