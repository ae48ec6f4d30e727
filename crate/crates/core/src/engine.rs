//! The agent population and its per-tick loop.
//!
//! Each tick runs in a fixed order:
//!
//! 1. settle every decision issued `h` ticks ago against the realised move,
//!    killing and respawning agents whose utility reaches zero;
//! 2. every agent whose lag fits inside the history forms a preliminary
//!    decision by comparing `p(t)` with `p(t - l)`;
//! 3. the merchant (interacting strategies only) picks its recommendation;
//! 4. RM strategies gate preliminary decisions against it;
//! 5. non-passive decisions whose settlement falls inside the data are
//!    queued;
//! 6. instant means are sampled on the configured stride.
//!
//! Queued decisions live in a ring of `h` slots per agent, indexed by issue
//! tick modulo `h`. An agent issues at most one decision per tick, so the
//! slot read at tick `t` holds exactly the decision issued at `t - h`, and it
//! is overwritten by the decision issued at `t`. A death wipes the agent's
//! column, which discards every bet of the dead incarnation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::interaction::{bm_birth_scale, rm_gate, MerchantMode, MerchantState, MerchantTally};
use crate::stats::{sample_transient, DeathEvent, PopulationView, TransientSample};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("agent {id} is still alive (utility {utility})")]
    AgentAlive { id: usize, utility: i64 },
    #[error("price series is empty")]
    EmptySeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Independent,
    /// Newborn scales drawn around the merchant's scale.
    Bm,
    /// Decisions gated by the merchant's recommendation.
    Rm,
    BmRm,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Independent, Strategy::Bm, Strategy::Rm, Strategy::BmRm];

    pub fn uses_merchant(self) -> bool {
        !matches!(self, Strategy::Independent)
    }

    pub fn merchant_births(self) -> bool {
        matches!(self, Strategy::Bm | Strategy::BmRm)
    }

    pub fn gates(self) -> bool {
        matches!(self, Strategy::Rm | Strategy::BmRm)
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "independent" => Ok(Strategy::Independent),
            "bm" => Ok(Strategy::Bm),
            "rm" => Ok(Strategy::Rm),
            "bm_rm" => Ok(Strategy::BmRm),
            other => Err(format!("unknown strategy {other:?} (independent|bm|rm|bm_rm)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Independent => "independent",
            Strategy::Bm => "bm",
            Strategy::Rm => "rm",
            Strategy::BmRm => "bm_rm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_tf: usize,
    pub u_born: u32,
    /// Prediction horizon in ticks.
    pub h: usize,
    pub l_min: usize,
    pub l_max: usize,
    pub strategy: Strategy,
    /// Dispersion of BM births around the merchant scale.
    pub mutation_sigma: f64,
    pub merchant_mode: MerchantMode,
    pub seed: u64,
    pub sample_every: usize,
}

impl SimConfig {
    /// 1000 agents born with utility 10 on scales in `[1, 10^5]`, BM
    /// dispersion 3000.
    pub fn paper(h: usize) -> Self {
        SimConfig {
            n_tf: 1000,
            u_born: 10,
            h,
            l_min: 1,
            l_max: 100_000,
            strategy: Strategy::Independent,
            mutation_sigma: 3000.0,
            merchant_mode: MerchantMode::Argmax,
            seed: 0,
            sample_every: 1000,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let fail = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.n_tf == 0 {
            return fail("n_tf must be at least 1");
        }
        if self.u_born == 0 {
            return fail("u_born must be at least 1");
        }
        if self.h == 0 {
            return fail("h must be at least 1");
        }
        if self.l_min == 0 || self.l_min > self.l_max {
            return fail("scale bounds must satisfy 1 <= l_min <= l_max");
        }
        if !(self.mutation_sigma > 0.0) || !self.mutation_sigma.is_finite() {
            return fail("mutation_sigma must be positive");
        }
        if self.sample_every == 0 {
            return fail("sample_every must be at least 1");
        }
        Ok(())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::paper(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentState {
    pub id: usize,
    pub generation: u32,
    pub scale: usize,
    pub utility: i64,
    pub birth_tick: usize,
}

impl AgentState {
    pub fn age(&self, t: usize) -> usize {
        t - self.birth_tick
    }
}

/// A queued decision awaiting its reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingSettlement {
    pub agent_id: usize,
    pub generation: u32,
    pub decision: i8,
    pub issued_tick: usize,
    pub due_tick: usize,
}

/// Trend signal: +1 (buy) iff the price rose above its lagged value.
#[inline(always)]
pub fn tf_decision<P: PartialOrd>(p_now: P, p_lagged: P) -> i8 {
    if p_now > p_lagged {
        1
    } else {
        -1
    }
}

/// Realised direction over the horizon; a flat move counts as up.
#[inline(always)]
pub fn discretize<P: PartialOrd>(p_at_t: P, p_at_t_plus_h: P) -> i8 {
    if p_at_t <= p_at_t_plus_h {
        1
    } else {
        -1
    }
}

#[inline(always)]
pub fn settle(utility: i64, decision: i8, dp: i8) -> i64 {
    utility + i64::from(decision * dp)
}

/// Uniform integer scale on `[l_min, l_max]`.
pub fn spawn_uniform<R: Rng + ?Sized>(rng: &mut R, l_min: usize, l_max: usize) -> usize {
    rng.random_range(l_min..=l_max)
}

/// Retires a dead incarnation and returns its death record together with
/// the successor occupying the same id.
pub fn kill_and_respawn(
    agent: AgentState,
    death_tick: usize,
    birth_scale: usize,
    u_born: u32,
) -> Result<(DeathEvent, AgentState), EngineError> {
    if agent.utility != 0 {
        return Err(EngineError::AgentAlive {
            id: agent.id,
            utility: agent.utility,
        });
    }
    let death = DeathEvent {
        tick: death_tick,
        lifetime: death_tick - agent.birth_tick,
        scale: agent.scale,
        agent_id: agent.id,
        generation: agent.generation,
    };
    let successor = AgentState {
        id: agent.id,
        generation: agent.generation + 1,
        scale: birth_scale,
        utility: i64::from(u_born),
        birth_tick: death_tick,
    };
    Ok((death, successor))
}

/// Receives the engine's event stream.
pub trait Recorder {
    fn on_death(&mut self, _death: &DeathEvent) {}
    fn on_sample(&mut self, _sample: &TransientSample) {}
}

impl Recorder for () {}

/// Keeps every event in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub deaths: Vec<DeathEvent>,
    pub samples: Vec<TransientSample>,
}

impl Recorder for RunRecord {
    fn on_death(&mut self, death: &DeathEvent) {
        self.deaths.push(*death);
    }

    fn on_sample(&mut self, sample: &TransientSample) {
        self.samples.push(*sample);
    }
}

/// Running counters for the conservation audit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub issued: u64,
    pub settled: u64,
    pub correct: u64,
    pub wrong: u64,
    /// Queued decisions dropped because their issuer died first.
    pub discarded: u64,
    pub utility_delta: i64,
    /// Preliminary decisions gated to the passive state.
    pub passive: u64,
    pub deaths: u64,
}

pub struct World<'a, P> {
    config: SimConfig,
    series: &'a [P],
    t: usize,
    scale: Vec<usize>,
    utility: Vec<i64>,
    birth: Vec<usize>,
    generation: Vec<u32>,
    /// `ring[slot * n_tf + id]`: decision issued by `id` at a tick ≡ slot (mod h).
    ring: Vec<i8>,
    preliminary: Vec<i8>,
    merchant: MerchantState,
    pinned: Option<MerchantState>,
    rng: ChaCha8Rng,
    tally: Tally,
    last_passive: usize,
    dying: Vec<usize>,
}

impl<'a, P: PartialOrd + Copy> World<'a, P> {
    /// Fresh population at tick 0 with uniformly drawn scales.
    pub fn new(config: SimConfig, series: &'a [P]) -> Result<Self, EngineError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scales = (0..config.n_tf)
            .map(|_| spawn_uniform(&mut rng, config.l_min, config.l_max))
            .collect();
        Self::build(config, series, scales, rng)
    }

    /// Fresh population with prescribed generation-0 scales. Later births
    /// still draw from the seeded stream.
    pub fn with_scales(config: SimConfig, series: &'a [P], scales: Vec<usize>) -> Result<Self, EngineError> {
        config.validate()?;
        if scales.len() != config.n_tf {
            return Err(EngineError::Config(format!(
                "expected {} scales, got {}",
                config.n_tf,
                scales.len()
            )));
        }
        if let Some(bad) = scales.iter().find(|l| **l < config.l_min || **l > config.l_max) {
            return Err(EngineError::Config(format!("scale {bad} outside [l_min, l_max]")));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::build(config, series, scales, rng)
    }

    fn build(config: SimConfig, series: &'a [P], scale: Vec<usize>, rng: ChaCha8Rng) -> Result<Self, EngineError> {
        if series.is_empty() {
            return Err(EngineError::EmptySeries);
        }
        let n = config.n_tf;
        Ok(World {
            merchant: MerchantState::initial(config.l_min, config.l_max),
            utility: vec![i64::from(config.u_born); n],
            birth: vec![0; n],
            generation: vec![0; n],
            ring: vec![0; n * config.h],
            preliminary: vec![0; n],
            scale,
            pinned: None,
            rng,
            tally: Tally::default(),
            last_passive: 0,
            dying: Vec::new(),
            series,
            config,
            t: 0,
        })
    }

    /// Replaces the merchant's selection with a fixed state for the rest of
    /// the run.
    pub fn pin_merchant(&mut self, state: MerchantState) {
        self.merchant = state;
        self.pinned = Some(state);
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Next tick to be processed.
    pub fn tick(&self) -> usize {
        self.t
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.series.len()
    }

    pub fn tally(&self) -> Tally {
        self.tally
    }

    pub fn merchant(&self) -> MerchantState {
        self.merchant
    }

    pub fn n_tf(&self) -> usize {
        self.config.n_tf
    }

    pub fn agent(&self, id: usize) -> AgentState {
        AgentState {
            id,
            generation: self.generation[id],
            scale: self.scale[id],
            utility: self.utility[id],
            birth_tick: self.birth[id],
        }
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentState> + '_ {
        (0..self.config.n_tf).map(|i| self.agent(i))
    }

    pub fn population(&self) -> PopulationView<'_> {
        PopulationView {
            utilities: &self.utility,
            birth_ticks: &self.birth,
        }
    }

    /// Fraction of the population gated to passive on the last processed tick.
    pub fn passive_fraction(&self) -> f64 {
        self.last_passive as f64 / self.config.n_tf as f64
    }

    /// Decisions queued and not yet settled, as of the start of `tick()`.
    pub fn pending(&self) -> Vec<PendingSettlement> {
        let (n, h) = (self.config.n_tf, self.config.h);
        let mut out = Vec::new();
        if self.t == 0 {
            return out;
        }
        let last = self.t - 1;
        for slot in 0..h {
            let back = (last + h - slot) % h;
            if back > last {
                continue;
            }
            let issued = last - back;
            for id in 0..n {
                let decision = self.ring[slot * n + id];
                if decision != 0 {
                    out.push(PendingSettlement {
                        agent_id: id,
                        generation: self.generation[id],
                        decision,
                        issued_tick: issued,
                        due_tick: issued + h,
                    });
                }
            }
        }
        out.sort_by_key(|p| (p.due_tick, p.agent_id));
        out
    }

    fn respawn<R: Recorder + ?Sized>(&mut self, id: usize, t: usize, slot: usize, rec: &mut R) {
        let cfg = &self.config;
        let birth_scale = if cfg.strategy.merchant_births() {
            bm_birth_scale(
                &mut self.rng,
                self.merchant.source_scale,
                cfg.mutation_sigma,
                cfg.l_min,
                cfg.l_max,
            )
        } else {
            spawn_uniform(&mut self.rng, cfg.l_min, cfg.l_max)
        };
        let (death, next) = kill_and_respawn(self.agent(id), t, birth_scale, cfg.u_born)
            .expect("respawn only follows a utility of zero");
        let n = cfg.n_tf;
        for k in 0..cfg.h {
            let cell = &mut self.ring[k * n + id];
            if *cell != 0 {
                if k != slot {
                    self.tally.discarded += 1;
                }
                *cell = 0;
            }
        }
        self.generation[id] = next.generation;
        self.scale[id] = next.scale;
        self.utility[id] = next.utility;
        self.birth[id] = next.birth_tick;
        self.tally.deaths += 1;
        rec.on_death(&death);
    }

    /// Processes one tick. Returns `false` once the series is exhausted.
    pub fn step<R: Recorder + ?Sized>(&mut self, rec: &mut R) -> bool {
        let t = self.t;
        let len = self.series.len();
        if t >= len {
            return false;
        }
        let (n, h) = (self.config.n_tf, self.config.h);
        let slot = t % h;
        let series = self.series;
        let p_now = series[t];

        if t >= h {
            let dp = discretize(series[t - h], p_now);
            let row = &self.ring[slot * n..(slot + 1) * n];
            let (mut correct, mut wrong) = (0u64, 0u64);
            for ((u, &s), id) in self.utility.iter_mut().zip(row).zip(0..) {
                if s == 0 {
                    continue;
                }
                *u = settle(*u, s, dp);
                if s == dp {
                    correct += 1;
                } else {
                    wrong += 1;
                    if *u == 0 {
                        self.dying.push(id);
                    }
                }
            }
            self.tally.settled += correct + wrong;
            self.tally.correct += correct;
            self.tally.wrong += wrong;
            self.tally.utility_delta += correct as i64 - wrong as i64;
            // Ascending id order keeps the birth draws reproducible.
            let mut dying = std::mem::take(&mut self.dying);
            for &id in &dying {
                self.respawn(id, t, slot, rec);
            }
            dying.clear();
            self.dying = dying;
        }

        let open = t + h < len;
        let strategy = self.config.strategy;
        let row = &mut self.ring[slot * n..(slot + 1) * n];
        let mut issued = 0u64;
        let mut passive = 0usize;
        if !strategy.uses_merchant() {
            for (cell, &l) in row.iter_mut().zip(&self.scale) {
                let s = if l <= t { tf_decision(p_now, series[t - l]) } else { 0 };
                let s = if open { s } else { 0 };
                issued += u64::from(s != 0);
                *cell = s;
            }
        } else {
            let mut tally = MerchantTally::default();
            for id in 0..n {
                let l = self.scale[id];
                let s = if l <= t { tf_decision(p_now, series[t - l]) } else { 0 };
                self.preliminary[id] = s;
                if s != 0 {
                    tally.push(id, self.utility[id], l, s);
                }
            }
            self.merchant = match self.pinned {
                Some(pinned) => pinned,
                None => tally.finish(self.config.merchant_mode, &self.merchant),
            };
            let recommendation = self.merchant.decision;
            let gating = strategy.gates();
            for (cell, &pre) in row.iter_mut().zip(&self.preliminary) {
                let s = if gating { rm_gate(pre, recommendation) } else { pre };
                passive += usize::from(pre != 0 && s == 0);
                let s = if open { s } else { 0 };
                issued += u64::from(s != 0);
                *cell = s;
            }
        }
        self.tally.issued += issued;
        self.tally.passive += passive as u64;
        self.last_passive = passive;

        if t.is_multiple_of(self.config.sample_every) || t + 1 == len {
            let sample = sample_transient(self.population(), t, self.tally.deaths, self.passive_fraction());
            rec.on_sample(&sample);
        }
        self.t += 1;
        true
    }

    /// Steps to the end of the series.
    pub fn run<R: Recorder + ?Sized>(&mut self, rec: &mut R) {
        while self.step(rec) {}
    }
}
