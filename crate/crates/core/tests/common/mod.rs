//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's counting,
//! requirement or TSM code; contests are plain `(ranking, count)` lists.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use awaire::contest::{Ballot, Contest};
use rand::seq::SliceRandom;
use rand::Rng;

pub type Profile = Vec<(Vec<usize>, u64)>;

pub fn labels(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("C{i}")).collect()
}

pub fn to_contest(name: &str, k: usize, profile: &Profile) -> Contest {
    let ballots = profile.iter().map(|(r, n)| Ballot::new(r.clone(), *n)).collect();
    Contest::new(name, labels(k), ballots).expect("valid profile")
}

pub fn profile_of(contest: &Contest) -> Profile {
    contest.ballots().iter().map(|b| (b.ranking.to_vec(), b.count)).collect()
}

/// A random partial ranking without repeats (possibly empty).
pub fn random_ranking<R: Rng>(rng: &mut R, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..k).collect();
    all.shuffle(rng);
    let len = rng.gen_range(0..=k);
    all.truncate(len);
    all
}

/// Random profile with `k` candidates and between 1 and `max_cards` cards.
pub fn random_profile<R: Rng>(rng: &mut R, k: usize, max_cards: u64) -> Profile {
    let cards = rng.gen_range(1..=max_cards);
    let kinds = rng.gen_range(1..=6usize);
    let rankings: Vec<Vec<usize>> = (0..kinds).map(|_| random_ranking(rng, k)).collect();
    let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
    for _ in 0..cards {
        let r = rankings[rng.gen_range(0..kinds)].clone();
        *counts.entry(r).or_default() += 1;
    }
    let mut out: Profile = counts.into_iter().collect();
    out.sort();
    out
}

pub fn total(profile: &Profile) -> u64 {
    profile.iter().map(|(_, n)| n).sum()
}

/// Tallies among `remaining` (a membership vector).
pub fn tallies(profile: &Profile, k: usize, remaining: &[bool]) -> Vec<u64> {
    let mut t = vec![0; k];
    for (r, n) in profile {
        if let Some(&c) = r.iter().find(|&&c| remaining[c]) {
            t[c] += n;
        }
    }
    t
}

/// IRV elimination order, lowest index eliminated on ties.
pub fn elimination_order(profile: &Profile, k: usize) -> Vec<usize> {
    let mut remaining = vec![true; k];
    let mut order = Vec::new();
    for _ in 0..k {
        let t = tallies(profile, k, &remaining);
        let loser = (0..k)
            .filter(|&c| remaining[c])
            .min_by_key(|&c| (t[c], c))
            .unwrap();
        remaining[loser] = false;
        order.push(loser);
    }
    order
}

pub fn set_of(cands: &[usize], k: usize) -> Vec<bool> {
    let mut v = vec![false; k];
    for &c in cands {
        v[c] = true;
    }
    v
}

/// Requirement described without the library's types:
/// `Db(i, j, S)` = i has more votes than j when only S remain;
/// `Dnd(i, j)` = i's first preferences do not exceed j's potential.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Req {
    Db(usize, usize, BTreeSet<usize>),
    Dnd(usize, usize),
}

impl Req {
    pub fn to_lib(&self) -> awaire::Requirement {
        match self {
            Req::Db(i, j, s) => awaire::Requirement::db(*i, *j, s.iter().copied().collect()),
            Req::Dnd(i, j) => awaire::Requirement::dnd(*i, *j),
        }
    }
}

pub fn first_prefs(profile: &Profile, i: usize) -> u64 {
    profile.iter().filter(|(r, _)| r.first() == Some(&i)).map(|(_, n)| n).sum()
}

/// Cards on which `j` is ranked and `i` does not appear before it.
pub fn potential(profile: &Profile, i: usize, j: usize) -> u64 {
    profile
        .iter()
        .filter(|(r, _)| match (r.iter().position(|&c| c == j), r.iter().position(|&c| c == i)) {
            (Some(pj), Some(pi)) => pj < pi,
            (Some(_), None) => true,
            _ => false,
        })
        .map(|(_, n)| n)
        .sum()
}

pub fn truth(profile: &Profile, k: usize, req: &Req) -> bool {
    match req {
        Req::Db(i, j, s) => {
            let members: Vec<usize> = s.iter().copied().collect();
            let t = tallies(profile, k, &set_of(&members, k));
            t[*i] > t[*j]
        }
        Req::Dnd(i, j) => first_prefs(profile, *i) <= potential(profile, *i, *j),
    }
}

/// Twice the assorter value of one card.
pub fn twice_assort(req: &Req, ranking: &[usize]) -> u64 {
    match req {
        Req::Db(i, j, s) => match ranking.iter().find(|c| s.contains(c)) {
            Some(c) if c == j => 2,
            Some(c) if c == i => 0,
            _ => 1,
        },
        Req::Dnd(i, j) => {
            if ranking.first() == Some(i) {
                return 2;
            }
            let pj = ranking.iter().position(|c| c == j);
            let pi = ranking.iter().position(|c| c == i);
            match (pj, pi) {
                (Some(a), Some(b)) if a < b => 0,
                (Some(_), None) => 0,
                _ => 1,
            }
        }
    }
}

/// Twice the population assorter total; compare against the card count.
pub fn twice_total(profile: &Profile, req: &Req) -> u64 {
    profile.iter().map(|(r, n)| twice_assort(req, r) * n).sum()
}

/// Every permutation of `0..k`, in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                prefix.push(c);
                go(prefix, used, out);
                prefix.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Elimination orders (earliest eliminated first) in which `winner` does not win.
pub fn alt_orders(k: usize, winner: usize) -> Vec<Vec<usize>> {
    permutations(k).into_iter().filter(|o| *o.last().unwrap() != winner).collect()
}

/// The requirements of suffix `s` (earliest eliminated first): every
/// candidate outside `s[p..]` fails to dominate `s[p]`, and every later
/// member of the suffix directly beats `s[p]` among `s[p..]`.
pub fn suffix_requirements(suffix: &[usize], k: usize) -> BTreeSet<Req> {
    let mut out = BTreeSet::new();
    for p in 0..suffix.len() {
        let later: BTreeSet<usize> = suffix[p..].iter().copied().collect();
        for u in (0..k).filter(|u| !later.contains(u)) {
            out.insert(Req::Dnd(u, suffix[p]));
        }
        for &q in &suffix[p + 1..] {
            out.insert(Req::Db(q, suffix[p], later.clone()));
        }
    }
    out
}

/// DB-only requirements of a complete elimination order.
pub fn order_db_requirements(order: &[usize]) -> Vec<Req> {
    let mut out = Vec::new();
    for p in 0..order.len() {
        let later: BTreeSet<usize> = order[p..].iter().copied().collect();
        for &q in &order[p + 1..] {
            out.push(Req::Db(q, order[p], later.clone()));
        }
    }
    out
}

/// ALPHA with truncated shrinkage, tracked as a running product.
#[derive(Debug, Clone)]
pub struct RefAlpha {
    pub eta0: f64,
    pub d: f64,
    pub b: u64,
    pub t: u64,
    pub sum: f64,
    pub m: f64,
    pub log_m: f64,
    pub refuted: bool,
    pub settled: bool,
}

impl RefAlpha {
    pub fn new(eta0: f64, d: f64, b: u64) -> Self {
        RefAlpha {
            eta0,
            d,
            b,
            t: 0,
            sum: 0.0,
            m: 1.0,
            log_m: 0.0,
            refuted: false,
            settled: false,
        }
    }

    pub fn mu(&self) -> f64 {
        (self.b as f64 / 2.0 - self.sum) / (self.b - self.t) as f64
    }

    pub fn eta(&self) -> f64 {
        let mu = self.mu();
        let t = self.t as f64;
        let shrunk = (self.d * self.eta0 + self.sum) / (self.d + t);
        let c = (self.eta0 - 0.5) / 2.0;
        let eta = shrunk.max(mu + c / (self.d + t).sqrt()).min(1.0 - 1e-6);
        if eta > mu {
            eta
        } else {
            (mu + 1.0) / 2.0
        }
    }

    pub fn push(&mut self, x: f64) {
        if self.refuted || self.settled {
            return;
        }
        let mu = self.mu();
        if mu > 0.0 {
            let eta = self.eta();
            let factor = (x / mu * (eta - mu) / (1.0 - mu) + (1.0 - eta) / (1.0 - mu)).max(0.0);
            self.m *= factor;
            self.log_m += factor.ln();
        }
        self.sum += x;
        self.t += 1;
        let b = self.b as f64;
        if self.sum > b / 2.0 {
            self.refuted = true;
        } else if self.sum + (self.b - self.t) as f64 <= b / 2.0 {
            self.settled = true;
        }
    }
}

/// Exhaustive audit over every alternative order with DB-only requirement
/// sets, each order tested by its own intersection TSM with "largest"
/// weighting. Returns the number of draws to certification, or `None`.
pub fn brute_force_audit(
    profile: &Profile,
    k: usize,
    reported_winner: usize,
    order: &[Vec<usize>],
    alpha: f64,
    eta0: f64,
    d: f64,
) -> Option<u64> {
    let b = total(profile);
    let orders = alt_orders(k, reported_winner);
    let mut keys: Vec<Req> = Vec::new();
    let mut key_index: HashMap<Req, usize> = HashMap::new();
    let sets: Vec<Vec<usize>> = orders
        .iter()
        .map(|o| {
            order_db_requirements(o)
                .into_iter()
                .map(|r| {
                    *key_index.entry(r.clone()).or_insert_with(|| {
                        keys.push(r);
                        keys.len() - 1
                    })
                })
                .collect()
        })
        .collect();
    let mut tsms: Vec<RefAlpha> = keys.iter().map(|_| RefAlpha::new(eta0, d, b)).collect();
    let mut log_i = vec![0.0f64; orders.len()];
    let mut alive = vec![true; orders.len()];
    let threshold = (1.0 / alpha).ln();
    for (t, card) in order.iter().enumerate() {
        let prev: Vec<f64> = tsms.iter().map(|m| m.log_m).collect();
        for (tsm, key) in tsms.iter_mut().zip(&keys) {
            tsm.push(twice_assort(key, card) as f64 / 2.0);
        }
        for (o, set) in sets.iter().enumerate() {
            if !alive[o] {
                continue;
            }
            let best = set.iter().map(|&r| prev[r]).fold(f64::NEG_INFINITY, f64::max);
            let winners: Vec<usize> = set.iter().copied().filter(|&r| prev[r] == best).collect();
            let ret: f64 = winners.iter().map(|&r| (tsms[r].log_m - prev[r]).exp()).sum::<f64>()
                / winners.len() as f64;
            log_i[o] += ret.ln();
            if log_i[o] >= threshold || set.iter().any(|&r| tsms[r].refuted) {
                alive[o] = false;
            }
        }
        if alive.iter().all(|a| !a) {
            return Some(t as u64 + 1);
        }
    }
    None
}
