//! Two-stage regional fusion.
//!
//! Early stage (`s > ρ`): every region branch denoises its own crop under its
//! sub-instruction; the fused latent is the reference trajectory with each
//! region's latent written over its box (ascending region order, later wins).
//! At the switch the region branches stop and the global branch takes over
//! from the last fused latent. Late stage (`s ≤ ρ`): the global branch
//! denoises the whole canvas under the full instruction, and only cells inside
//! the region union keep its prediction; everything else is pinned to the
//! reference trajectory.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendDescriptor, Condition, DenoiserBackend, ScheduleKind};
use crate::error::{CoreError, Result};
use crate::geometry::{
    box_to_latent_mask, crop_latent, mask_union, place, BoundingBox, LatentMask, RegionInstance,
};
use crate::scalar::Scalar;
use crate::scheduler::{
    euler_step, is_region_phase, reference_latent, region_phase_steps, SwitchPolicy, TimeGrid,
};
use crate::tensor::{masked_blend, patch_token_count, sample_noise, Grid, Image, NoiseField};

/// Which replacement terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Region latents in the early stage, reference background throughout.
    #[default]
    Both,
    /// The global prediction stands in for region latents in the early stage.
    NoTarget,
    /// The global prediction stands in for the reference background.
    NoBackground,
}

impl std::str::FromStr for Strategy {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "no_target" => Ok(Self::NoTarget),
            "no_background" => Ok(Self::NoBackground),
            other => Err(CoreError::Config(format!(
                "unknown strategy {other:?} (expected both, no_target, no_background)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub steps: usize,
    pub rho: f64,
    #[serde(default)]
    pub strategy: Strategy,
    pub seed: u64,
    #[serde(default)]
    pub trace: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            rho: 0.6,
            strategy: Strategy::Both,
            seed: 0,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Global,
    Region(usize),
}

impl BranchKind {
    pub fn label(&self) -> String {
        match self {
            Self::Global => "global".into(),
            Self::Region(k) => format!("region-{k}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Branch<S> {
    pub kind: BranchKind,
    pub condition: Condition<S>,
    pub latent: Grid<S>,
    pub bbox: Option<BoundingBox>,
    pub active: bool,
    noise: Grid<S>,
}

impl<S: Scalar> Branch<S> {
    /// The noise this branch started from at `s = 1`.
    pub fn initial_noise(&self) -> &Grid<S> {
        &self.noise
    }

    fn advance(&mut self, backend: &dyn DenoiserBackend<S>, s: f64, ds: f64) -> Result<()> {
        let v = backend.predict_velocity(&self.latent, s, &self.condition, Some(&self.noise))?;
        if v.shape() != self.latent.shape() {
            return Err(CoreError::Backend(format!(
                "velocity shape {} differs from latent {}",
                v.shape(),
                self.latent.shape()
            )));
        }
        self.latent = euler_step(&self.latent, &v, ds)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Region,
    Global,
}

impl Phase {
    pub fn at(s: f64, policy: SwitchPolicy) -> Self {
        if is_region_phase(s, policy) {
            Self::Region
        } else {
            Self::Global
        }
    }
}

/// Fused latent recorded at one grid point.
#[derive(Debug, Clone)]
pub struct TraceEntry<S> {
    pub index: usize,
    pub s: f64,
    pub phase: Phase,
    pub fused: Grid<S>,
    /// Tokens spent by each branch on the step that produced this entry.
    pub branch_tokens: Vec<(String, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Early,
    Switched,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchTokens {
    pub branch: String,
    pub tokens_per_step: u64,
    pub steps: usize,
    pub total: u64,
}

/// Patch-token cost of a run against the single-branch global baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenReport {
    pub per_branch: Vec<BranchTokens>,
    pub region_phase: u64,
    pub global_phase: u64,
    pub total: u64,
    /// What the global branch alone would spend over the region-phase steps.
    pub baseline_region_phase: u64,
    pub baseline_total: u64,
}

impl TokenReport {
    #[allow(clippy::too_many_arguments)]
    pub fn plan(
        canvas_w: u32,
        canvas_h: u32,
        boxes: &[BoundingBox],
        vae_factor: u32,
        patch: u32,
        region_steps: usize,
        global_steps: usize,
        strategy: Strategy,
    ) -> Self {
        let (f, p) = (vae_factor as u64, patch as u64);
        let global = patch_token_count(canvas_h as u64, canvas_w as u64, f, p);
        let global_early = match strategy {
            Strategy::Both => 0,
            Strategy::NoTarget | Strategy::NoBackground => region_steps,
        };
        let region_early = match strategy {
            Strategy::NoTarget => 0,
            Strategy::Both | Strategy::NoBackground => region_steps,
        };
        let mut per_branch = vec![BranchTokens {
            branch: BranchKind::Global.label(),
            tokens_per_step: global,
            steps: global_early + global_steps,
            total: global * (global_early + global_steps) as u64,
        }];
        for (k, b) in boxes.iter().enumerate() {
            let t = patch_token_count(b.height() as u64, b.width() as u64, f, p);
            per_branch.push(BranchTokens {
                branch: BranchKind::Region(k).label(),
                tokens_per_step: t,
                steps: region_early,
                total: t * region_early as u64,
            });
        }
        let region_phase = per_branch[1..].iter().map(|b| b.total).sum::<u64>()
            + global * global_early as u64;
        let global_phase = global * global_steps as u64;
        Self {
            per_branch,
            region_phase,
            global_phase,
            total: region_phase + global_phase,
            baseline_region_phase: global * region_steps as u64,
            baseline_total: global * (region_steps + global_steps) as u64,
        }
    }
}

fn two_decimals<S: serde::Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_some(&((x * 100.0).round() / 100.0)),
        None => s.serialize_none(),
    }
}

/// Wall-clock seconds per pipeline stage, monotonic clock, two decimals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    #[serde(serialize_with = "two_decimals")]
    pub parse_s: Option<f64>,
    #[serde(serialize_with = "two_decimals")]
    pub detect_s: Option<f64>,
    #[serde(serialize_with = "two_decimals")]
    pub inference_s: Option<f64>,
    #[serde(serialize_with = "two_decimals")]
    pub total_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub backend: String,
    pub steps: usize,
    pub rho: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub regions: Vec<RegionSummary>,
    pub region_phase_steps: usize,
    pub global_phase_steps: usize,
    pub tokens: TokenReport,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub referring_expression: String,
    pub sub_instruction: String,
    pub bbox: BoundingBox,
    pub mask_cells: usize,
}

/// One edit in flight. Owned by a single driver; steps must be taken in order.
pub struct EditSession<'b, S: Scalar> {
    backend: &'b dyn DenoiserBackend<S>,
    descriptor: BackendDescriptor,
    reference: Image<S>,
    instruction: String,
    regions: Vec<RegionInstance<S>>,
    grid: TimeGrid,
    policy: SwitchPolicy,
    strategy: Strategy,
    seed: u64,
    noise: NoiseField<S>,
    clean_reference: Grid<S>,
    union: LatentMask,
    global: Branch<S>,
    branches: Vec<Branch<S>>,
    fused: Grid<S>,
    cursor: usize,
    stage: Stage,
    trace: Option<Vec<TraceEntry<S>>>,
    inference: Duration,
}

impl<'b, S: Scalar> EditSession<'b, S> {
    pub fn new(
        reference: Image<S>,
        instruction: impl Into<String>,
        regions: Vec<RegionInstance<S>>,
        config: &SessionConfig,
        backend: &'b dyn DenoiserBackend<S>,
    ) -> Result<Self> {
        let started = Instant::now();
        let descriptor = backend.descriptor();
        descriptor.validate()?;
        let policy = SwitchPolicy::new(config.rho)?;
        let grid = match descriptor.schedule {
            ScheduleKind::Uniform => TimeGrid::uniform(config.steps)?,
            ScheduleKind::Shifted { shift } => TimeGrid::shifted(config.steps, shift)?,
        };
        let f = descriptor.vae_factor;
        if !reference.width().is_multiple_of(f) || !reference.height().is_multiple_of(f) {
            return Err(CoreError::Config(format!(
                "{}x{} reference is not divisible by codec factor {f}",
                reference.width(),
                reference.height()
            )));
        }
        let clean_reference = backend.encode(&reference)?;
        let shape = clean_reference.shape();
        let noise = sample_noise::<S>(config.seed, shape)?;

        let multiple = descriptor.padding_multiple();
        let mut branches = Vec::with_capacity(regions.len());
        for (k, region) in regions.iter().enumerate() {
            let b = region.bbox;
            b.ensure_within(reference.width(), reference.height())?;
            if !b.is_aligned(f) || b.width() % multiple != 0 || b.height() % multiple != 0 {
                return Err(CoreError::Config(format!(
                    "region {k} box {b} is not padded to the backend multiple {multiple} \
                     (vae_factor {f}, patch {})",
                    descriptor.patch
                )));
            }
            let expected = box_to_latent_mask(&b, f, shape.height, shape.width)?;
            if region.mask != expected {
                return Err(CoreError::Config(format!(
                    "region {k} mask is not the rasterization of {b}"
                )));
            }
            if region.crop_image.width() != b.width() || region.crop_image.height() != b.height() {
                return Err(CoreError::Config(format!(
                    "region {k} crop is {}x{}, box is {}x{}",
                    region.crop_image.width(),
                    region.crop_image.height(),
                    b.width(),
                    b.height()
                )));
            }
            let start = crop_latent(&noise.grid, &b, f)?;
            branches.push(Branch {
                kind: BranchKind::Region(k),
                condition: Condition::new(region.crop_image.clone(), &region.sub_instruction)?,
                latent: start.clone(),
                bbox: Some(b),
                active: true,
                noise: start,
            });
        }
        let masks: Vec<LatentMask> = regions.iter().map(|r| r.mask.clone()).collect();
        let union = mask_union(&masks, shape.height, shape.width)?;
        let global = Branch {
            kind: BranchKind::Global,
            condition: Condition::new(reference.clone(), instruction)?,
            latent: noise.grid.clone(),
            bbox: None,
            active: config.strategy != Strategy::Both,
            noise: noise.grid.clone(),
        };
        let instruction = global.condition.instruction.clone();

        let mut session = Self {
            backend,
            descriptor,
            reference,
            instruction,
            regions,
            grid,
            policy,
            strategy: config.strategy,
            seed: config.seed,
            fused: noise.grid.clone(),
            noise,
            clean_reference,
            union,
            global,
            branches,
            cursor: 0,
            stage: Stage::Early,
            trace: config.trace.then(Vec::new),
            inference: Duration::ZERO,
        };
        session.fused = session.fuse_early(1.0)?;
        session.record(0, Vec::new());
        session.inference += started.elapsed();
        Ok(session)
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn policy(&self) -> SwitchPolicy {
        self.policy
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn noise(&self) -> &NoiseField<S> {
        &self.noise
    }

    pub fn clean_reference(&self) -> &Grid<S> {
        &self.clean_reference
    }

    pub fn union_mask(&self) -> &LatentMask {
        &self.union
    }

    pub fn regions(&self) -> &[RegionInstance<S>] {
        &self.regions
    }

    pub fn region_branches(&self) -> &[Branch<S>] {
        &self.branches
    }

    pub fn global_branch(&self) -> &Branch<S> {
        &self.global
    }

    pub fn fused(&self) -> &Grid<S> {
        &self.fused
    }

    /// Index of the next step to take (grid point the state currently sits on).
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn trace(&self) -> Option<&[TraceEntry<S>]> {
        self.trace.as_deref()
    }

    /// `z_ref` at time `s`.
    pub fn reference_at(&self, s: f64) -> Result<Grid<S>> {
        reference_latent(&self.clean_reference, &self.noise, s)
    }

    pub fn region_steps(&self) -> usize {
        region_phase_steps(&self.grid, self.policy)
    }

    /// Reference trajectory with region latents written over their boxes.
    fn compose(&self, base: Grid<S>) -> Result<Grid<S>> {
        let shape = base.shape();
        let f = self.descriptor.vae_factor;
        let mut fused = base;
        for (branch, region) in self.branches.iter().zip(&self.regions) {
            let placed = place(&branch.latent, &region.bbox, f, shape)?;
            fused = masked_blend(&fused, &placed, &region.mask)?;
        }
        Ok(fused)
    }

    fn fuse_early(&self, s: f64) -> Result<Grid<S>> {
        match self.strategy {
            Strategy::Both => self.compose(self.reference_at(s)?),
            Strategy::NoTarget => masked_blend(&self.reference_at(s)?, &self.global.latent, &self.union),
            Strategy::NoBackground => self.compose(self.global.latent.clone()),
        }
    }

    fn step_tokens(&self, early: bool) -> Vec<(String, u64)> {
        let (f, p) = (self.descriptor.vae_factor as u64, self.descriptor.patch as u64);
        let global = || {
            (
                BranchKind::Global.label(),
                patch_token_count(self.reference.height() as u64, self.reference.width() as u64, f, p),
            )
        };
        let mut out = Vec::new();
        if !early || self.strategy != Strategy::Both {
            out.push(global());
        }
        if early && self.strategy != Strategy::NoTarget {
            for b in &self.branches {
                let bb = b.bbox.expect("region branch has a box");
                out.push((
                    b.kind.label(),
                    patch_token_count(bb.height() as u64, bb.width() as u64, f, p),
                ));
            }
        }
        out
    }

    fn record(&mut self, index: usize, branch_tokens: Vec<(String, u64)>) {
        if self.trace.is_none() {
            return;
        }
        let s = self.grid.time(index);
        let entry = TraceEntry {
            index,
            s,
            phase: Phase::at(s, self.policy),
            fused: self.fused.clone(),
            branch_tokens,
        };
        if let Some(t) = self.trace.as_mut() {
            t.push(entry);
        }
    }

    fn expect_step(&self, step_index: usize, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(CoreError::State(format!(
                "step {step_index} requested in stage {:?}, expected {stage:?}",
                self.stage
            )));
        }
        if step_index != self.cursor || step_index >= self.grid.steps() {
            return Err(CoreError::State(format!(
                "step {step_index} out of order (next step is {} of {})",
                self.cursor,
                self.grid.steps()
            )));
        }
        Ok(())
    }

    /// Advances the region branches one step and returns the fused latent.
    pub fn run_early_step(&mut self, step_index: usize) -> Result<Grid<S>> {
        if step_index < self.grid.steps() && !is_region_phase(self.grid.time(step_index), self.policy) {
            return Err(CoreError::Phase(format!(
                "step {step_index} at s = {} belongs to the global stage (rho = {})",
                self.grid.time(step_index),
                self.policy.rho()
            )));
        }
        self.expect_step(step_index, Stage::Early)?;
        let started = Instant::now();
        let (s, next) = (self.grid.time(step_index), self.grid.time(step_index + 1));
        let ds = s - next;
        let backend = self.backend;
        if self.strategy != Strategy::NoTarget {
            self.branches
                .par_iter_mut()
                .try_for_each(|b| b.advance(backend, s, ds))?;
        }
        if self.strategy != Strategy::Both {
            self.global.advance(backend, s, ds)?;
        }
        self.fused = self.fuse_early(next)?;
        if self.strategy != Strategy::Both {
            self.global.latent = self.fused.clone();
        }
        self.cursor += 1;
        let tokens = self.step_tokens(true);
        self.record(self.cursor, tokens);
        self.inference += started.elapsed();
        Ok(self.fused.clone())
    }

    /// Ends the region stage and hands the last fused latent to the global branch.
    pub fn switch_to_global(&mut self) -> Result<Grid<S>> {
        if self.stage != Stage::Early {
            return Err(CoreError::State("already switched to the global stage".into()));
        }
        if self.cursor < self.grid.steps() && is_region_phase(self.grid.time(self.cursor), self.policy) {
            return Err(CoreError::State(format!(
                "region stage unfinished: s = {} > rho = {}",
                self.grid.time(self.cursor),
                self.policy.rho()
            )));
        }
        for b in &mut self.branches {
            b.active = false;
        }
        self.global.active = true;
        self.global.latent = self.fused.clone();
        self.stage = Stage::Switched;
        Ok(self.fused.clone())
    }

    /// Advances the global branch one step and pins the background.
    pub fn run_late_step(&mut self, step_index: usize) -> Result<Grid<S>> {
        if step_index < self.grid.steps() && is_region_phase(self.grid.time(step_index), self.policy) {
            return Err(CoreError::Phase(format!(
                "step {step_index} at s = {} belongs to the region stage (rho = {})",
                self.grid.time(step_index),
                self.policy.rho()
            )));
        }
        self.expect_step(step_index, Stage::Switched)?;
        let started = Instant::now();
        let (s, next) = (self.grid.time(step_index), self.grid.time(step_index + 1));
        self.global.advance(self.backend, s, s - next)?;
        self.fused = match self.strategy {
            Strategy::NoBackground => self.global.latent.clone(),
            Strategy::Both | Strategy::NoTarget => {
                masked_blend(&self.reference_at(next)?, &self.global.latent, &self.union)?
            }
        };
        self.global.latent = self.fused.clone();
        self.cursor += 1;
        let tokens = self.step_tokens(false);
        self.record(self.cursor, tokens);
        self.inference += started.elapsed();
        Ok(self.fused.clone())
    }

    /// Decodes the final latent and reports phase counts, token cost and timing.
    pub fn finalize(&mut self) -> Result<(Image<S>, RunReport)> {
        if self.stage != Stage::Switched || self.cursor != self.grid.steps() {
            return Err(CoreError::State(format!(
                "cannot finalize at step {} of {}",
                self.cursor,
                self.grid.steps()
            )));
        }
        let started = Instant::now();
        let image = self.backend.decode(&self.fused)?;
        self.stage = Stage::Done;
        self.inference += started.elapsed();

        let region_steps = self.region_steps();
        let global_steps = self.grid.steps() - region_steps;
        let boxes: Vec<BoundingBox> = self.regions.iter().map(|r| r.bbox).collect();
        let tokens = TokenReport::plan(
            self.reference.width(),
            self.reference.height(),
            &boxes,
            self.descriptor.vae_factor,
            self.descriptor.patch,
            region_steps,
            global_steps,
            self.strategy,
        );
        let report = RunReport {
            backend: self.descriptor.name.clone(),
            steps: self.grid.steps(),
            rho: self.policy.rho(),
            strategy: self.strategy,
            seed: self.seed,
            regions: self
                .regions
                .iter()
                .map(|r| RegionSummary {
                    referring_expression: r.referring_expression.clone(),
                    sub_instruction: r.sub_instruction.clone(),
                    bbox: r.bbox,
                    mask_cells: r.mask.count(),
                })
                .collect(),
            region_phase_steps: region_steps,
            global_phase_steps: global_steps,
            tokens,
            timings: Timings {
                inference_s: Some(self.inference.as_secs_f64()),
                ..Timings::default()
            },
        };
        Ok((image, report))
    }

    /// Drives every remaining step and finalizes.
    pub fn run(&mut self) -> Result<(Image<S>, RunReport)> {
        while self.stage == Stage::Early
            && self.cursor < self.grid.steps()
            && is_region_phase(self.grid.time(self.cursor), self.policy)
        {
            self.run_early_step(self.cursor)?;
        }
        if self.stage == Stage::Early {
            self.switch_to_global()?;
        }
        while self.cursor < self.grid.steps() {
            self.run_late_step(self.cursor)?;
        }
        self.finalize()
    }
}

/// Plain single-branch global editing: Euler from the seeded noise under
/// `(reference, instruction)`. Returns every latent on the grid, `s = 1` first.
pub fn run_global_baseline<S: Scalar>(
    reference: &Image<S>,
    instruction: &str,
    steps: usize,
    seed: u64,
    backend: &dyn DenoiserBackend<S>,
) -> Result<Vec<Grid<S>>> {
    let grid = match backend.descriptor().schedule {
        ScheduleKind::Uniform => TimeGrid::uniform(steps)?,
        ScheduleKind::Shifted { shift } => TimeGrid::shifted(steps, shift)?,
    };
    let shape = backend.encode(reference)?.shape();
    let noise = sample_noise::<S>(seed, shape)?;
    let mut branch = Branch {
        kind: BranchKind::Global,
        condition: Condition::new(reference.clone(), instruction)?,
        latent: noise.grid.clone(),
        bbox: None,
        active: true,
        noise: noise.grid,
    };
    let mut out = vec![branch.latent.clone()];
    for i in 0..steps {
        branch.advance(backend, grid.time(i), grid.step_size(i))?;
        out.push(branch.latent.clone());
    }
    Ok(out)
}
