//! Visit-frequency driven refinement of an ordered partition.
//!
//! [`Pasa`] tracks an estimate `u_bar[j]` of how often the agent sits in
//! bar set `j` and, every `nu` iterations, regenerates the split vector so
//! that the most visited non-singleton cells are the ones being halved.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{initial_split_vector, Interval, OrderedPartition};

/// How the current split target is compared against the best candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Switch when `u[rho_k] < u_max - vartheta`.
    Additive,
    /// Switch when `u[rho_k] < u_max * vartheta`.
    Multiplicative,
}

/// When visits are folded into the frequency estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterMode {
    /// Every iteration, one stochastic-approximation step per bar set.
    PerStep,
    /// Count visits per cell and fold them in once per period with the
    /// step size reweighted to `1 - (1 - varsigma)^nu`.
    Batched,
}

/// What happens to the estimate of a bar set whose interval changed in a
/// repartition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preservation {
    /// Copy the old estimate of a bar set with the identical interval, if
    /// there was one.
    IntervalIdentity,
    /// Estimates stay attached to their index.
    CellIndex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PasaParams {
    pub varsigma: f64,
    /// Optional per-bar-set step sizes, overriding `varsigma`. Needs
    /// [`CounterMode::PerStep`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub varsigma_per_index: Option<Vec<f64>>,
    pub vartheta: f64,
    pub threshold: ThresholdMode,
    pub nu: u64,
    pub counter: CounterMode,
    pub preservation: Preservation,
}

impl Default for PasaParams {
    fn default() -> Self {
        PasaParams {
            varsigma: 1e-8,
            varsigma_per_index: None,
            vartheta: 0.9,
            threshold: ThresholdMode::Multiplicative,
            nu: 50_000,
            counter: CounterMode::Batched,
            preservation: Preservation::IntervalIdentity,
        }
    }
}

impl PasaParams {
    pub fn validate(&self) -> Result<()> {
        let step_ok = |s: f64| (0.0..=1.0).contains(&s);
        if !step_ok(self.varsigma) {
            return Err(Error::invalid(format!("varsigma {} outside [0,1]", self.varsigma)));
        }
        if self.nu == 0 {
            return Err(Error::invalid("nu must be at least 1"));
        }
        match self.threshold {
            ThresholdMode::Additive if !(self.vartheta > 0.0) => {
                return Err(Error::invalid("additive vartheta must be positive"));
            }
            ThresholdMode::Multiplicative if !(self.vartheta > 0.0 && self.vartheta < 1.0) => {
                return Err(Error::invalid("multiplicative vartheta must lie in (0,1)"));
            }
            _ => {}
        }
        if let Some(v) = &self.varsigma_per_index {
            if self.counter == CounterMode::Batched {
                return Err(Error::invalid(
                    "per-index varsigma is only defined for per-step counting",
                ));
            }
            if let Some(bad) = v.iter().find(|&&s| !step_ok(s)) {
                return Err(Error::invalid(format!("varsigma entry {bad} outside [0,1]")));
            }
        }
        Ok(())
    }

    /// Step size used by one batched fold.
    pub fn batched_step(&self) -> f64 {
        -f64::exp_m1(self.nu as f64 * f64::ln_1p(-self.varsigma))
    }
}

/// Outcome of one regeneration of the split vector.
#[derive(Clone, Debug, PartialEq)]
pub struct RepartitionReport {
    pub iteration: u64,
    pub old_rho: Vec<usize>,
    pub new_rho: Vec<usize>,
    /// 1-based indices `j` whose cell interval differs from before.
    pub cells_changed: Vec<usize>,
    pub u_bar: Vec<f64>,
}

impl RepartitionReport {
    pub fn changed(&self) -> bool {
        self.old_rho != self.new_rho
    }

    /// One line of the repartition event log.
    pub fn log_line(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut line = format!(
            "iteration={} old_rho={} new_rho={} u_bar=",
            self.iteration,
            join(&self.old_rho),
            join(&self.new_rho)
        );
        for (j, u) in self.u_bar.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            let _ = write!(line, "{u:.6e}");
        }
        line
    }
}

/// Below this the lazily scaled estimates are renormalised.
const SCALE_FLOOR: f64 = 1e-200;

#[derive(Clone, Debug)]
enum Estimates {
    /// `u_bar[j] = scale * raw[j]`; one step costs O(chain length).
    Lazy { scale: f64, keep: f64 },
    /// `raw` holds `u_bar` directly and every entry is touched each step.
    Eager,
    /// `raw` holds `u_bar`; `counts` collects per-cell visits.
    Batched { counts: Vec<u64>, step: f64 },
}

/// Adaptive partition state for one agent.
#[derive(Clone, Debug)]
pub struct Pasa {
    params: PasaParams,
    partition: OrderedPartition,
    previous_cells: Vec<Interval>,
    old_rho: Vec<usize>,
    raw: Vec<f64>,
    estimates: Estimates,
    work: Vec<f64>,
    counter: u64,
    iteration: u64,
    repartitions: u64,
    last_report: Option<RepartitionReport>,
    events: Option<Vec<String>>,
    mark: Vec<bool>,
}

impl Pasa {
    /// Start from `base` with `x` cells in total, using the default
    /// starting split vector.
    pub fn new(base: OrderedPartition, x: usize, params: PasaParams) -> Result<Self> {
        let x0 = base.base_count();
        if x < x0 {
            return Err(Error::invalid(format!("X = {x} is below X0 = {x0}")));
        }
        let rho = initial_split_vector(&base, x - x0)?;
        Self::with_split_vector(base, &rho, params)
    }

    pub fn with_split_vector(
        base: OrderedPartition,
        rho: &[usize],
        params: PasaParams,
    ) -> Result<Self> {
        params.validate()?;
        let partition = base.with_split_vector(rho)?;
        let x = partition.len();
        if x > partition.states() {
            return Err(Error::invalid("more cells than states"));
        }
        if let Some(v) = &params.varsigma_per_index {
            if v.len() != x {
                return Err(Error::invalid(format!(
                    "per-index varsigma has {} entries, expected {x}",
                    v.len()
                )));
            }
        }
        let estimates = match (params.counter, &params.varsigma_per_index) {
            (CounterMode::Batched, _) => Estimates::Batched {
                counts: vec![0; x],
                step: params.batched_step(),
            },
            (CounterMode::PerStep, None) if params.varsigma < 0.5 => Estimates::Lazy {
                scale: 1.0,
                keep: 1.0 - params.varsigma,
            },
            (CounterMode::PerStep, _) => Estimates::Eager,
        };
        Ok(Pasa {
            previous_cells: partition.cells().to_vec(),
            old_rho: partition.rho().to_vec(),
            params,
            partition,
            raw: vec![0.0; x],
            estimates,
            work: vec![0.0; x],
            counter: 0,
            iteration: 0,
            repartitions: 0,
            last_report: None,
            events: None,
            mark: vec![false; x],
        })
    }

    pub fn partition(&self) -> &OrderedPartition {
        &self.partition
    }

    pub fn params(&self) -> &PasaParams {
        &self.params
    }

    /// Cells in force before the latest repartition.
    pub fn previous_cells(&self) -> &[Interval] {
        &self.previous_cells
    }

    pub fn repartitions(&self) -> u64 {
        self.repartitions
    }

    pub fn iterations(&self) -> u64 {
        self.iteration
    }

    /// Iterations since the last repartition, in `[0, nu)`.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn last_report(&self) -> Option<&RepartitionReport> {
        self.last_report.as_ref()
    }

    /// Current `u_bar`, one entry per bar set.
    pub fn visit_estimates(&self) -> Vec<f64> {
        match self.estimates {
            Estimates::Lazy { scale, .. } => self.raw.iter().map(|v| v * scale).collect(),
            _ => self.raw.clone(),
        }
    }

    /// Overwrite `u_bar`. Pending batched counts are discarded.
    pub fn set_visit_estimates(&mut self, u_bar: &[f64]) -> Result<()> {
        if u_bar.len() != self.raw.len() {
            return Err(Error::invalid(format!(
                "expected {} estimates, got {}",
                self.raw.len(),
                u_bar.len()
            )));
        }
        self.raw.copy_from_slice(u_bar);
        match &mut self.estimates {
            Estimates::Lazy { scale, .. } => *scale = 1.0,
            Estimates::Batched { counts, .. } => counts.fill(0),
            Estimates::Eager => {}
        }
        Ok(())
    }

    /// Record a visit to 1-based `state` without advancing the schedule.
    pub fn update_visit_estimates(&mut self, state: usize) -> Result<()> {
        let cell = self.partition.cell_of(state)? - 1;
        self.observe_cell(cell);
        Ok(())
    }

    #[inline]
    fn observe_cell(&mut self, cell: usize) {
        match &mut self.estimates {
            Estimates::Batched { counts, .. } => counts[cell] += 1,
            Estimates::Lazy { scale, keep } => {
                *scale *= *keep;
                let add = self.params.varsigma / *scale;
                let raw = &mut self.raw;
                self.partition.for_each_bar_of_cell(cell, |j| raw[j] += add);
                if *scale < SCALE_FLOOR {
                    let s = *scale;
                    self.raw.iter_mut().for_each(|v| *v *= s);
                    *scale = 1.0;
                }
            }
            Estimates::Eager => {
                let mark = &mut self.mark;
                self.partition.for_each_bar_of_cell(cell, |j| mark[j] = true);
                for (j, u) in self.raw.iter_mut().enumerate() {
                    let step = match &self.params.varsigma_per_index {
                        Some(v) => v[j],
                        None => self.params.varsigma,
                    };
                    let hit = if mark[j] { 1.0 } else { 0.0 };
                    *u += step * (hit - *u);
                    mark[j] = false;
                }
            }
        }
    }

    /// One iteration at 1-based `state`. Returns the report when this call
    /// completed a period.
    pub fn tick(&mut self, state: usize) -> Result<Option<RepartitionReport>> {
        let cell = self.partition.cell_of(state)? - 1;
        Ok(self.tick_cell(cell).then(|| self.report_now()))
    }

    /// One iteration given the 0-based cell of the visited state. Returns
    /// `true` when a repartition ran; `previous_cells` then holds the cells
    /// from before it.
    #[inline]
    pub fn tick_cell(&mut self, cell: usize) -> bool {
        self.observe_cell(cell);
        self.iteration += 1;
        self.counter += 1;
        if self.counter < self.params.nu {
            return false;
        }
        self.counter = 0;
        self.repartition_inner();
        if self.events.is_some() {
            let line = self.build_report().log_line();
            self.events.as_mut().expect("checked").push(line);
        }
        true
    }

    /// Keep a log line for every scheduled repartition from now on.
    pub fn enable_event_log(&mut self) {
        self.events.get_or_insert_with(Vec::new);
    }

    /// Logged lines so far (empty when logging is off).
    pub fn take_events(&mut self) -> Vec<String> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Run a repartition now, outside the schedule.
    pub fn repartition(&mut self) -> RepartitionReport {
        self.repartition_inner();
        self.report_now()
    }

    fn report_now(&mut self) -> RepartitionReport {
        let report = self.build_report();
        self.last_report = Some(report.clone());
        report
    }

    fn build_report(&self) -> RepartitionReport {
        let cells_changed = self
            .partition
            .cells()
            .iter()
            .zip(&self.previous_cells)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(j, _)| j + 1)
            .collect();
        RepartitionReport {
            iteration: self.iteration,
            old_rho: self.old_rho.clone(),
            new_rho: self.partition.rho().to_vec(),
            cells_changed,
            u_bar: self.visit_estimates(),
        }
    }

    fn fold_counts(&mut self) {
        match &mut self.estimates {
            Estimates::Batched { counts, step } => {
                // bar count = own cell count plus the bar counts of every
                // cell split off from it; children always have larger indices
                let x0 = self.partition.base_count();
                let rho = self.partition.rho();
                for j in (x0..counts.len()).rev() {
                    let parent = rho[j - x0] - 1;
                    counts[parent] += counts[j];
                }
                let nu = self.params.nu as f64;
                for (u, c) in self.raw.iter_mut().zip(counts.iter_mut()) {
                    *u += *step * (*c as f64 / nu - *u);
                    *c = 0;
                }
            }
            Estimates::Lazy { scale, .. } => {
                let s = *scale;
                self.raw.iter_mut().for_each(|v| *v *= s);
                *scale = 1.0;
            }
            Estimates::Eager => {}
        }
    }

    fn repartition_inner(&mut self) {
        self.fold_counts();
        self.repartitions += 1;
        self.previous_cells.clear();
        self.previous_cells.extend_from_slice(self.partition.cells());
        self.old_rho.clear();
        self.old_rho.extend_from_slice(self.partition.rho());
        let old_bars: Vec<Interval> = self.partition.bar_sets().to_vec();

        self.work.copy_from_slice(&self.raw);
        let u = &mut self.work;
        let p = &mut self.partition;
        let x0 = p.base_count();
        let rho = self.old_rho.clone();
        p.reset_to_base();
        for (k, &current) in rho.iter().enumerate() {
            let limit = x0 + k;
            let mut best: Option<usize> = None;
            for i in 0..limit {
                if !p.sigma()[i] && best.is_none_or(|b| u[i] > u[b]) {
                    best = Some(i);
                }
            }
            let Some(i_max) = best else {
                // unreachable while X <= S
                break;
            };
            let u_max = u[i_max];
            let mut target = current - 1;
            let own = if p.sigma()[target] { 0.0 } else { u[target] };
            let switch = match self.params.threshold {
                ThresholdMode::Additive => own < u_max - self.params.vartheta,
                ThresholdMode::Multiplicative => own < u_max * self.params.vartheta,
            };
            if switch || p.sigma()[target] {
                target = i_max;
            }
            u[target] -= u[limit];
            p.split_unindexed(target);
        }
        p.reindex();

        if self.params.preservation == Preservation::IntervalIdentity {
            let old_u = self.raw.clone();
            let by_interval: HashMap<Interval, usize> =
                old_bars.iter().enumerate().map(|(j, b)| (*b, j)).collect();
            for (j, bar) in p.bar_sets().iter().enumerate().skip(x0) {
                if *bar != old_bars[j] {
                    if let Some(&old) = by_interval.get(bar) {
                        self.raw[j] = old_u[old];
                    }
                }
            }
        }
    }
}
