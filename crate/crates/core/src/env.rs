//! MiniBuild: a small deterministic RTS economy with the BuildMarines task
//! structure.
//!
//! Workers harvest automatically, supply depots raise the supply cap, barracks
//! unlock marine production, and the environment pays +1 only per completed
//! marine. All economy constants live in [`EnvConfig`] so they can be audited
//! and dumped with [`EnvConfig::rule_report`].

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of discrete action identifiers.
pub const NUM_ACTIONS: usize = 5;
/// Length of the non-spatial feature vector.
pub const NONSPATIAL_LEN: usize = 13;
/// One-hot occupancy layers plus the selection layer.
pub const SCREEN_LAYERS: usize = 9;
/// Coarse density layers (structures, units, minerals).
pub const MINIMAP_LAYERS: usize = 3;
/// Total spatial layers per observation.
pub const SPATIAL_LAYERS: usize = SCREEN_LAYERS + MINIMAP_LAYERS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ActionId {
    NoOp = 0,
    BuildWorker = 1,
    BuildDepot = 2,
    BuildBarracks = 3,
    TrainMarine = 4,
}

impl ActionId {
    pub const ALL: [ActionId; NUM_ACTIONS] = [
        ActionId::NoOp,
        ActionId::BuildWorker,
        ActionId::BuildDepot,
        ActionId::BuildBarracks,
        ActionId::TrainMarine,
    ];

    pub fn from_index(i: usize) -> Option<ActionId> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether the action consumes the spatial arguments.
    pub fn is_placement(self) -> bool {
        matches!(self, ActionId::BuildDepot | ActionId::BuildBarracks)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionId::NoOp => "no_op",
            ActionId::BuildWorker => "build_worker",
            ActionId::BuildDepot => "build_depot",
            ActionId::BuildBarracks => "build_barracks",
            ActionId::TrainMarine => "train_marine",
        }
    }
}

/// Action identifier plus the two spatial arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompoundAction {
    pub id: ActionId,
    pub x: usize,
    pub y: usize,
}

impl CompoundAction {
    pub fn new(id: ActionId, x: usize, y: usize) -> Self {
        CompoundAction { id, x, y }
    }

    pub fn simple(id: ActionId) -> Self {
        CompoundAction { id, x: 0, y: 0 }
    }

    pub fn no_op() -> Self {
        Self::simple(ActionId::NoOp)
    }
}

/// Something that can be produced or constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitKind {
    Worker,
    Depot,
    Barracks,
    Marine,
}

impl UnitKind {
    pub const ALL: [UnitKind; 4] = [
        UnitKind::Worker,
        UnitKind::Depot,
        UnitKind::Barracks,
        UnitKind::Marine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnitKind::Worker => "worker",
            UnitKind::Depot => "depot",
            UnitKind::Barracks => "barracks",
            UnitKind::Marine => "marine",
        }
    }
}

/// A value for each [`UnitKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerUnit {
    pub worker: u32,
    pub depot: u32,
    pub barracks: u32,
    pub marine: u32,
}

impl PerUnit {
    pub fn get(&self, kind: UnitKind) -> u32 {
        match kind {
            UnitKind::Worker => self.worker,
            UnitKind::Depot => self.depot,
            UnitKind::Barracks => self.barracks,
            UnitKind::Marine => self.marine,
        }
    }

    pub fn get_mut(&mut self, kind: UnitKind) -> &mut u32 {
        match kind {
            UnitKind::Worker => &mut self.worker,
            UnitKind::Depot => &mut self.depot,
            UnitKind::Barracks => &mut self.barracks,
            UnitKind::Marine => &mut self.marine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupplyRules {
    /// Cap granted by the main base.
    pub base: u32,
    /// Cap added per completed depot.
    pub depot: u32,
    pub worker: u32,
    pub marine: u32,
}

/// The rule table and episode settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub grid_size: usize,
    pub episode_length: u32,
    pub costs: PerUnit,
    pub durations: PerUnit,
    pub supply: SupplyRules,
    pub harvest_rate: u32,
    pub initial_workers: u32,
    pub initial_minerals: u32,
    /// Half-width of the buildable plateau around the base.
    pub build_radius: usize,
    pub rng_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            grid_size: 64,
            episode_length: 800,
            costs: PerUnit {
                worker: 50,
                depot: 100,
                barracks: 150,
                marine: 50,
            },
            durations: PerUnit {
                worker: 5,
                depot: 10,
                barracks: 15,
                marine: 5,
            },
            supply: SupplyRules {
                base: 15,
                depot: 8,
                worker: 1,
                marine: 1,
            },
            harvest_rate: 1,
            initial_workers: 6,
            initial_minerals: 50,
            build_radius: 2,
            rng_seed: 0,
        }
    }
}

impl EnvConfig {
    /// Small task where a random policy rarely reaches a marine: 16x16 grid, 100 steps, tight build area.
    pub fn desk() -> Self {
        EnvConfig {
            grid_size: 16,
            episode_length: 100,
            build_radius: 1,
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 8 {
            return Err(Error::config(format!(
                "grid_size must be >= 8, got {}",
                self.grid_size
            )));
        }
        if self.episode_length < 1 {
            return Err(Error::config("episode_length must be >= 1"));
        }
        for kind in UnitKind::ALL {
            if self.costs.get(kind) == 0 || self.durations.get(kind) == 0 {
                return Err(Error::config(format!(
                    "cost and duration of {} must be positive",
                    kind.name()
                )));
            }
        }
        let s = &self.supply;
        if s.base == 0 || s.depot == 0 || s.worker == 0 || s.marine == 0 {
            return Err(Error::config("supply values must be positive"));
        }
        if self.harvest_rate == 0 {
            return Err(Error::config("harvest_rate must be positive"));
        }
        if self.initial_workers * s.worker > s.base {
            return Err(Error::config("initial workers exceed the base supply cap"));
        }
        if self.build_radius == 0 || 2 * self.build_radius + 3 >= self.grid_size {
            return Err(Error::config(format!(
                "build_radius {} does not fit a grid of {}",
                self.build_radius, self.grid_size
            )));
        }
        Ok(())
    }

    /// Plain-text dump of the rule table.
    pub fn rule_report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "MiniBuild rule table");
        let _ = writeln!(out, "grid_size        {}", self.grid_size);
        let _ = writeln!(out, "episode_length   {}", self.episode_length);
        let _ = writeln!(
            out,
            "harvest_rate     {} per worker per step",
            self.harvest_rate
        );
        let _ = writeln!(out, "initial_workers  {}", self.initial_workers);
        let _ = writeln!(out, "initial_minerals {}", self.initial_minerals);
        let _ = writeln!(out, "build_radius     {}", self.build_radius);
        let _ = writeln!(out, "supply base      {}", self.supply.base);
        let _ = writeln!(out, "supply per depot +{}", self.supply.depot);
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>9} {:>7}",
            "unit", "cost", "duration", "supply"
        );
        for kind in UnitKind::ALL {
            let supply = match kind {
                UnitKind::Worker => self.supply.worker.to_string(),
                UnitKind::Marine => self.supply.marine.to_string(),
                UnitKind::Depot => format!("+{}", self.supply.depot),
                UnitKind::Barracks => "0".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>9} {:>7}",
                kind.name(),
                self.costs.get(kind),
                self.durations.get(kind),
                supply
            );
        }
        let _ = writeln!(
            out,
            "prerequisites    barracks <- depot; marine <- idle barracks"
        );
        let _ = writeln!(out, "reward           +1 per marine completed");
        out
    }

    pub(crate) fn layout(&self) -> Layout {
        let g = self.grid_size;
        let r = self.build_radius;
        Layout {
            size: g,
            base: (r + 3, g / 2),
            radius: r,
        }
    }
}

/// Fixed map geometry derived from the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    size: usize,
    base: (usize, usize),
    radius: usize,
}

impl Layout {
    fn is_mineral(&self, x: usize, y: usize) -> bool {
        x == 0 && y + 2 >= self.base.1 && y <= self.base.1 + 2
    }

    fn is_buildable(&self, x: usize, y: usize) -> bool {
        let (bx, by) = self.base;
        (x, y) != self.base && x.abs_diff(bx) <= self.radius && y.abs_diff(by) <= self.radius
    }

    fn is_mining_area(&self, x: usize, y: usize) -> bool {
        (1..=2).contains(&x) && y + 3 >= self.base.1 && y <= self.base.1 + 3
    }

    fn is_rally_area(&self, x: usize, _y: usize) -> bool {
        x > self.base.0 + self.radius + 1
    }
}

/// Occupant of a grid cell. The discriminant doubles as the one-hot layer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Cell {
    Empty = 0,
    Base = 1,
    Worker = 2,
    Depot = 3,
    Barracks = 4,
    Marine = 5,
    Mineral = 6,
    Construction = 7,
}

impl Cell {
    pub fn from_code(code: u8) -> Option<Cell> {
        Some(match code {
            0 => Cell::Empty,
            1 => Cell::Base,
            2 => Cell::Worker,
            3 => Cell::Depot,
            4 => Cell::Barracks,
            5 => Cell::Marine,
            6 => Cell::Mineral,
            7 => Cell::Construction,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueItem {
    pub kind: UnitKind,
    pub remaining: u32,
    /// Construction site for structures, producing barracks for marines.
    pub cell: Option<(usize, usize)>,
}

/// Production and economy totals that goal detection is defined over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Counters {
    pub workers: u32,
    pub depots: u32,
    pub barracks: u32,
    pub marines: u32,
    pub harvested: u64,
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub step: u32,
    pub minerals: u64,
    pub supply_used: u32,
    pub supply_cap: u32,
    pub grid_size: usize,
    pub grid: Vec<Cell>,
    pub queue: Vec<QueueItem>,
    pub workers: u32,
    pub depots: u32,
    pub barracks: u32,
    pub marines_completed: u32,
    /// Cumulative minerals harvested since reset.
    pub harvested: u64,
    pub last_action: ActionId,
    pub selection: Option<(usize, usize)>,
}

impl WorldState {
    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.grid[y * self.grid_size + x]
    }

    fn set(&mut self, x: usize, y: usize, cell: Cell) {
        self.grid[y * self.grid_size + x] = cell;
    }

    pub fn count(&self, kind: UnitKind) -> u32 {
        match kind {
            UnitKind::Worker => self.workers,
            UnitKind::Depot => self.depots,
            UnitKind::Barracks => self.barracks,
            UnitKind::Marine => self.marines_completed,
        }
    }

    pub fn counters(&self) -> Counters {
        Counters {
            workers: self.workers,
            depots: self.depots,
            barracks: self.barracks,
            marines: self.marines_completed,
            harvested: self.harvested,
        }
    }

    fn base_busy(&self) -> bool {
        self.queue.iter().any(|q| q.kind == UnitKind::Worker)
    }

    fn idle_barracks(&self) -> Option<(usize, usize)> {
        let g = self.grid_size;
        (0..g * g)
            .map(|i| (i % g, i / g))
            .filter(|&(x, y)| self.cell(x, y) == Cell::Barracks)
            .find(|&c| {
                !self
                    .queue
                    .iter()
                    .any(|q| q.kind == UnitKind::Marine && q.cell == Some(c))
            })
    }

    /// Compact snapshot from which an [`Observation`] can be rendered.
    pub fn snapshot(&self, config: &EnvConfig, mask: ActionMask) -> Snapshot {
        Snapshot {
            grid_size: self.grid_size,
            cells: self.grid.iter().map(|&c| c as u8).collect(),
            selection: self.selection,
            nonspatial: self.nonspatial(config),
            action_mask: mask,
            counters: self.counters(),
        }
    }

    fn nonspatial(&self, config: &EnvConfig) -> [f64; NONSPATIAL_LEN] {
        let clip = |v: f64| v.clamp(0.0, 1.0);
        let last = self.last_action.index();
        [
            clip(self.minerals as f64 / 1000.0),
            self.supply_used as f64 / self.supply_cap as f64,
            clip(self.workers as f64 / 50.0),
            clip(self.depots as f64 / 16.0),
            clip(self.barracks as f64 / 16.0),
            clip(self.marines_completed as f64 / 50.0),
            clip(self.queue.len() as f64 / 8.0),
            self.step as f64 / config.episode_length as f64,
            clip(self.supply_cap as f64 / 200.0),
            (self.harvested % 100) as f64 / 100.0,
            (last & 1) as f64,
            ((last >> 1) & 1) as f64,
            ((last >> 2) & 1) as f64,
        ]
    }
}

/// Legality of each action id, indexed by [`ActionId::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionMask(pub [bool; NUM_ACTIONS]);

impl ActionMask {
    pub fn is_legal(&self, id: ActionId) -> bool {
        self.0[id.index()]
    }

    pub fn legal(&self) -> impl Iterator<Item = ActionId> + '_ {
        ActionId::ALL.into_iter().filter(|a| self.is_legal(*a))
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Compact frame: cell codes, selection, non-spatial features and mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub grid_size: usize,
    pub cells: Vec<u8>,
    pub selection: Option<(usize, usize)>,
    pub nonspatial: [f64; NONSPATIAL_LEN],
    pub action_mask: ActionMask,
    pub counters: Counters,
}

impl Snapshot {
    /// Render the layered spatial tensor.
    pub fn observation(&self) -> Observation {
        let g = self.grid_size;
        let plane = g * g;
        let mut spatial = vec![0.0; SPATIAL_LAYERS * plane];
        for (i, &code) in self.cells.iter().enumerate() {
            spatial[code as usize * plane + i] = 1.0;
        }
        if let Some((x, y)) = self.selection {
            spatial[8 * plane + y * g + x] = 1.0;
        }
        let block = (g / 8).max(2);
        for by in (0..g).step_by(block) {
            for bx in (0..g).step_by(block) {
                let mut counts = [0usize; MINIMAP_LAYERS];
                let mut n = 0usize;
                for y in by..(by + block).min(g) {
                    for x in bx..(bx + block).min(g) {
                        n += 1;
                        match Cell::from_code(self.cells[y * g + x]) {
                            Some(
                                Cell::Base | Cell::Depot | Cell::Barracks | Cell::Construction,
                            ) => counts[0] += 1,
                            Some(Cell::Worker | Cell::Marine) => counts[1] += 1,
                            Some(Cell::Mineral) => counts[2] += 1,
                            _ => {}
                        }
                    }
                }
                for (k, &c) in counts.iter().enumerate() {
                    let v = c as f64 / n as f64;
                    let layer = (SCREEN_LAYERS + k) * plane;
                    for y in by..(by + block).min(g) {
                        for x in bx..(bx + block).min(g) {
                            spatial[layer + y * g + x] = v;
                        }
                    }
                }
            }
        }
        Observation {
            grid_size: g,
            spatial,
            nonspatial: self.nonspatial,
            action_mask: self.action_mask,
        }
    }
}

/// What the agent and the mutual-embedding model see.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub grid_size: usize,
    /// `[SPATIAL_LAYERS x G x G]`, row-major, values in `[0, 1]`.
    pub spatial: Vec<f64>,
    pub nonspatial: [f64; NONSPATIAL_LEN],
    pub action_mask: ActionMask,
}

impl Observation {
    pub fn shape(&self) -> [usize; 3] {
        [SPATIAL_LAYERS, self.grid_size, self.grid_size]
    }

    /// Screen group (occupancy + selection) as a flat slice.
    pub fn screen(&self) -> &[f64] {
        let plane = self.grid_size * self.grid_size;
        &self.spatial[..SCREEN_LAYERS * plane]
    }

    /// Coarse density group as a flat slice.
    pub fn minimap(&self) -> &[f64] {
        let plane = self.grid_size * self.grid_size;
        &self.spatial[SCREEN_LAYERS * plane..]
    }
}

/// Legal-action mask for a state.
pub fn legal_actions(state: &WorldState, config: &EnvConfig) -> ActionMask {
    let layout = config.layout();
    let minerals = state.minerals;
    let c = &config.costs;
    let headroom = state.supply_cap.saturating_sub(state.supply_used);
    let free_site = free_build_sites(state, &layout) > 0;
    let mut mask = [false; NUM_ACTIONS];
    mask[ActionId::NoOp.index()] = true;
    mask[ActionId::BuildWorker.index()] =
        minerals >= c.worker as u64 && headroom >= config.supply.worker && !state.base_busy();
    mask[ActionId::BuildDepot.index()] = minerals >= c.depot as u64 && free_site;
    mask[ActionId::BuildBarracks.index()] =
        minerals >= c.barracks as u64 && free_site && state.depots >= 1;
    mask[ActionId::TrainMarine.index()] = minerals >= c.marine as u64
        && headroom >= config.supply.marine
        && state.barracks >= 1
        && state.idle_barracks().is_some();
    ActionMask(mask)
}

fn free_build_sites(state: &WorldState, layout: &Layout) -> usize {
    let (bx, by) = layout.base;
    let r = layout.radius;
    let mut n = 0;
    for y in by - r..=by + r {
        for x in bx - r..=bx + r {
            if layout.is_buildable(x, y) && state.cell(x, y) == Cell::Empty {
                n += 1;
            }
        }
    }
    n
}

/// Result of a single [`MiniBuild::step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// One environment instance.
#[derive(Debug, Clone)]
pub struct MiniBuild {
    config: EnvConfig,
    layout: Layout,
    state: WorldState,
    rng: ChaCha8Rng,
    done: bool,
}

impl MiniBuild {
    /// Fresh episode. Deterministic for a given config and seed.
    pub fn reset(config: &EnvConfig, seed: u64) -> Result<(MiniBuild, Observation)> {
        let env = Self::new(config, seed)?;
        let obs = env.observe();
        Ok((env, obs))
    }

    /// Like [`MiniBuild::reset`] without rendering the first observation.
    pub fn new(config: &EnvConfig, seed: u64) -> Result<MiniBuild> {
        config.validate()?;
        let layout = config.layout();
        let g = config.grid_size;
        let mut state = WorldState {
            step: 0,
            minerals: config.initial_minerals as u64,
            supply_used: config.initial_workers * config.supply.worker,
            supply_cap: config.supply.base,
            grid_size: g,
            grid: vec![Cell::Empty; g * g],
            queue: Vec::new(),
            workers: config.initial_workers,
            depots: 0,
            barracks: 0,
            marines_completed: 0,
            harvested: 0,
            last_action: ActionId::NoOp,
            selection: None,
        };
        for y in 0..g {
            for x in 0..g {
                if layout.is_mineral(x, y) {
                    state.set(x, y, Cell::Mineral);
                }
            }
        }
        state.set(layout.base.0, layout.base.1, Cell::Base);
        let mut env = MiniBuild {
            config: config.clone(),
            layout,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            done: false,
        };
        for _ in 0..config.initial_workers {
            env.spawn_unit(Cell::Worker);
        }
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn legal_actions(&self) -> ActionMask {
        legal_actions(&self.state, &self.config)
    }

    pub fn snapshot(&self) -> Snapshot {
        self.state.snapshot(&self.config, self.legal_actions())
    }

    pub fn observe(&self) -> Observation {
        self.snapshot().observation()
    }

    /// Advance one step and render the next observation.
    pub fn step(&mut self, action: CompoundAction) -> Result<StepOutcome> {
        let (reward, done) = self.advance(action)?;
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done,
        })
    }

    /// Advance one step without rendering. Returns `(reward, done)`.
    pub fn advance(&mut self, action: CompoundAction) -> Result<(f64, bool)> {
        if self.done {
            return Err(Error::usage("step called after the episode finished"));
        }
        let applied = self.apply_action(action);
        self.state.last_action = applied;

        let harvest = self.config.harvest_rate as u64 * self.state.workers as u64;
        self.state.minerals += harvest;
        self.state.harvested += harvest;

        let marines = self.progress_queue();
        self.state.step += 1;
        self.done = self.state.step >= self.config.episode_length;
        Ok((marines as f64, self.done))
    }

    /// Validate and enqueue. Returns the action actually executed.
    fn apply_action(&mut self, action: CompoundAction) -> ActionId {
        let mask = self.legal_actions();
        if !mask.is_legal(action.id) {
            return ActionId::NoOp;
        }
        let cfg = &self.config;
        let kind = match action.id {
            ActionId::NoOp => return ActionId::NoOp,
            ActionId::BuildWorker => UnitKind::Worker,
            ActionId::BuildDepot => UnitKind::Depot,
            ActionId::BuildBarracks => UnitKind::Barracks,
            ActionId::TrainMarine => UnitKind::Marine,
        };
        let cell = match kind {
            UnitKind::Depot | UnitKind::Barracks => {
                let (x, y) = (action.x, action.y);
                if x >= cfg.grid_size
                    || y >= cfg.grid_size
                    || !self.layout.is_buildable(x, y)
                    || self.state.cell(x, y) != Cell::Empty
                {
                    return ActionId::NoOp;
                }
                self.state.set(x, y, Cell::Construction);
                self.state.selection = Some((x, y));
                Some((x, y))
            }
            UnitKind::Marine => self.state.idle_barracks(),
            UnitKind::Worker => None,
        };
        match kind {
            UnitKind::Worker => self.state.supply_used += cfg.supply.worker,
            UnitKind::Marine => self.state.supply_used += cfg.supply.marine,
            _ => {}
        }
        self.state.minerals -= cfg.costs.get(kind) as u64;
        self.state.queue.push(QueueItem {
            kind,
            remaining: cfg.durations.get(kind),
            cell,
        });
        action.id
    }

    /// Tick the build queue; returns the number of marines completed.
    fn progress_queue(&mut self) -> u32 {
        let mut finished = Vec::new();
        self.state.queue.retain_mut(|item| {
            item.remaining -= 1;
            if item.remaining == 0 {
                finished.push(*item);
                false
            } else {
                true
            }
        });
        let mut marines = 0;
        for item in finished {
            match item.kind {
                UnitKind::Worker => {
                    self.state.workers += 1;
                    self.spawn_unit(Cell::Worker);
                }
                UnitKind::Marine => {
                    self.state.marines_completed += 1;
                    marines += 1;
                    self.spawn_unit(Cell::Marine);
                }
                UnitKind::Depot => {
                    let (x, y) = item.cell.expect("depot has a site");
                    self.state.set(x, y, Cell::Depot);
                    self.state.depots += 1;
                    self.state.supply_cap += self.config.supply.depot;
                }
                UnitKind::Barracks => {
                    let (x, y) = item.cell.expect("barracks has a site");
                    self.state.set(x, y, Cell::Barracks);
                    self.state.barracks += 1;
                }
            }
        }
        marines
    }

    /// Place a unit marker on a random free cell of its area. Units that do not
    /// fit are still counted, just not drawn.
    fn spawn_unit(&mut self, cell: Cell) {
        let g = self.config.grid_size;
        let layout = self.layout;
        let preferred = |x: usize, y: usize| match cell {
            Cell::Worker => layout.is_mining_area(x, y),
            _ => layout.is_rally_area(x, y),
        };
        let free = |s: &WorldState, x: usize, y: usize| {
            s.cell(x, y) == Cell::Empty && !layout.is_buildable(x, y)
        };
        let mut candidates: Vec<usize> = (0..g * g)
            .filter(|&i| preferred(i % g, i / g) && free(&self.state, i % g, i / g))
            .collect();
        if candidates.is_empty() {
            candidates = (0..g * g)
                .filter(|&i| free(&self.state, i % g, i / g))
                .collect();
        }
        if candidates.is_empty() {
            return;
        }
        let i = candidates[self.rng.gen_range(0..candidates.len())];
        self.state.set(i % g, i / g, cell);
    }
}

/// Step-by-step checker for the simulator's invariants.
#[derive(Debug, Clone)]
pub struct Auditor {
    minerals: u64,
    harvested: u64,
    rewards: f64,
}

impl Auditor {
    pub fn new(env: &MiniBuild) -> Self {
        Auditor {
            minerals: env.state.minerals,
            harvested: env.state.harvested,
            rewards: 0.0,
        }
    }

    /// Violations present after the step that emitted `reward`.
    pub fn check(&mut self, env: &MiniBuild, reward: f64) -> Vec<String> {
        let s = &env.state;
        let cfg = &env.config;
        let mut out = Vec::new();
        let cost = match s.last_action {
            ActionId::NoOp => 0,
            ActionId::BuildWorker => cfg.costs.worker,
            ActionId::BuildDepot => cfg.costs.depot,
            ActionId::BuildBarracks => cfg.costs.barracks,
            ActionId::TrainMarine => cfg.costs.marine,
        } as i128;
        let expected =
            self.minerals as i128 + (s.harvested as i128 - self.harvested as i128) - cost;
        if expected < 0 {
            out.push(format!(
                "step {}: minerals would be negative ({expected})",
                s.step
            ));
        }
        if expected != s.minerals as i128 {
            out.push(format!(
                "step {}: minerals {} but accounting gives {expected}",
                s.step, s.minerals
            ));
        }
        if s.supply_used > s.supply_cap {
            out.push(format!(
                "step {}: supply {} exceeds cap {}",
                s.step, s.supply_used, s.supply_cap
            ));
        }
        self.rewards += reward;
        if self.rewards != s.marines_completed as f64 {
            out.push(format!(
                "step {}: rewards {} but {} marines completed",
                s.step, self.rewards, s.marines_completed
            ));
        }
        let cells = |c: Cell| s.grid.iter().filter(|&&g| g == c).count() as u32;
        let sites = s
            .queue
            .iter()
            .filter(|q| matches!(q.kind, UnitKind::Depot | UnitKind::Barracks))
            .count() as u32;
        if cells(Cell::Depot) != s.depots
            || cells(Cell::Barracks) != s.barracks
            || cells(Cell::Construction) != sites
        {
            out.push(format!(
                "step {}: structure cells disagree with counts",
                s.step
            ));
        }
        if s.barracks > 0 && s.depots == 0 {
            out.push(format!(
                "step {}: barracks completed before any depot",
                s.step
            ));
        }
        let mask = env.legal_actions();
        if !mask.is_legal(ActionId::NoOp) {
            out.push(format!("step {}: no_op masked", s.step));
        }
        if mask.is_legal(ActionId::TrainMarine) && s.barracks == 0 {
            out.push(format!(
                "step {}: train_marine legal without barracks",
                s.step
            ));
        }
        let snap = env.snapshot();
        let obs = snap.observation();
        let unit = |v: &f64| (0.0..=1.0).contains(v);
        if !obs.screen().iter().all(unit)
            || !obs.minimap().iter().all(unit)
            || !snap.nonspatial.iter().all(unit)
        {
            out.push(format!("step {}: observation value outside [0, 1]", s.step));
        }
        self.minerals = s.minerals;
        self.harvested = s.harvested;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EnvConfig {
        EnvConfig {
            grid_size: 16,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn auditor_flags_tampered_state() {
        let mut env = MiniBuild::new(&small(), 0).unwrap();
        let mut audit = Auditor::new(&env);
        let (r, _) = env.advance(CompoundAction::no_op()).unwrap();
        assert!(audit.check(&env, r).is_empty());
        env.state.supply_used = env.state.supply_cap + 1;
        env.state.minerals += 7;
        let (r, _) = env.advance(CompoundAction::no_op()).unwrap();
        let v = audit.check(&env, r + 1.0);
        assert_eq!(v.len(), 4, "{v:?}");
    }

    #[test]
    fn reset_defaults() {
        let (env, obs) = MiniBuild::reset(&EnvConfig::default(), 7).unwrap();
        assert_eq!(obs.nonspatial[0], 50.0 / 1000.0);
        assert_eq!(env.state().supply_used, 6);
        assert_eq!(env.state().supply_cap, 15);
        assert_eq!(obs.nonspatial.len(), NONSPATIAL_LEN);
    }

    #[test]
    fn spatial_shape_on_smallest_grid() {
        let cfg = EnvConfig {
            grid_size: 8,
            ..EnvConfig::default()
        };
        let (_, obs) = MiniBuild::reset(&cfg, 0).unwrap();
        assert_eq!(obs.shape(), [12, 8, 8]);
        assert_eq!(obs.spatial.len(), 12 * 64);
        assert!(obs.spatial.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn reset_is_deterministic() {
        let (_, a) = MiniBuild::reset(&small(), 3).unwrap();
        let (_, b) = MiniBuild::reset(&small(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = EnvConfig {
            grid_size: 4,
            ..EnvConfig::default()
        };
        assert!(matches!(MiniBuild::new(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = EnvConfig::default();
        cfg.costs.depot = 0;
        assert!(MiniBuild::new(&cfg, 0).is_err());
    }

    #[test]
    fn depot_deducts_then_harvests() {
        let mut env = MiniBuild::new(&small(), 1).unwrap();
        env.state.minerals = 100;
        let (bx, by) = env.layout.base;
        let out = env
            .step(CompoundAction::new(ActionId::BuildDepot, bx + 1, by))
            .unwrap();
        assert_eq!(env.state().minerals, 6);
        assert_eq!(out.reward, 0.0);
        assert_eq!(env.state().queue.len(), 1);
        assert_eq!(env.state().queue[0].kind, UnitKind::Depot);
        assert_eq!(env.state().queue[0].remaining, 9);
    }

    #[test]
    fn marine_without_barracks_is_no_op() {
        let mut env = MiniBuild::new(&small(), 1).unwrap();
        env.state.minerals = 500;
        let before = env.state().clone();
        let (r, _) = env
            .advance(CompoundAction::simple(ActionId::TrainMarine))
            .unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(env.state().queue.len(), 0);
        assert_eq!(env.state().minerals, before.minerals + 6);
        assert_eq!(env.state().last_action, ActionId::NoOp);
    }

    #[test]
    fn marine_completion_pays_one() {
        let mut env = MiniBuild::new(&small(), 1).unwrap();
        let (bx, by) = env.layout.base;
        env.state.set(bx + 1, by, Cell::Barracks);
        env.state.barracks = 1;
        env.state.depots = 1;
        env.state.minerals = 50;
        let (r, _) = env
            .advance(CompoundAction::simple(ActionId::TrainMarine))
            .unwrap();
        assert_eq!(r, 0.0);
        let mut total = 0.0;
        for _ in 0..4 {
            total += env.advance(CompoundAction::no_op()).unwrap().0;
        }
        assert_eq!(total, 1.0);
        assert_eq!(env.state().marines_completed, 1);
    }

    #[test]
    fn legality_rules() {
        let env = MiniBuild::new(&small(), 0).unwrap();
        let mask = env.legal_actions();
        assert!(mask.is_legal(ActionId::NoOp));
        assert!(mask.is_legal(ActionId::BuildWorker));
        assert!(!mask.is_legal(ActionId::BuildBarracks));
        assert!(!mask.is_legal(ActionId::BuildDepot));

        let mut s = env.state().clone();
        s.barracks = 1;
        s.depots = 1;
        let (bx, by) = env.layout.base;
        s.set(bx + 1, by, Cell::Barracks);
        s.minerals = 49;
        assert!(!legal_actions(&s, env.config()).is_legal(ActionId::TrainMarine));
        s.minerals = 50;
        assert!(legal_actions(&s, env.config()).is_legal(ActionId::TrainMarine));
        s.supply_used = s.supply_cap;
        let mask = legal_actions(&s, env.config());
        assert!(!mask.is_legal(ActionId::TrainMarine));
        assert!(!mask.is_legal(ActionId::BuildWorker));
    }

    #[test]
    fn step_after_done_errors() {
        let cfg = EnvConfig {
            episode_length: 2,
            ..small()
        };
        let mut env = MiniBuild::new(&cfg, 0).unwrap();
        env.advance(CompoundAction::no_op()).unwrap();
        let (_, done) = env.advance(CompoundAction::no_op()).unwrap();
        assert!(done);
        assert!(matches!(
            env.advance(CompoundAction::no_op()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn placement_outside_plateau_is_no_op() {
        let mut env = MiniBuild::new(&small(), 0).unwrap();
        env.state.minerals = 100;
        env.advance(CompoundAction::new(ActionId::BuildDepot, 15, 15))
            .unwrap();
        assert!(env.state().queue.is_empty());
        assert_eq!(env.state().minerals, 106);
    }
}
