//! State branch: two convolutional towers over the stacked spatial layers plus a
//! dense tower over the stacked non-spatial features, fused into one embedding.

use rand::Rng;

use crate::autodiff::{Conv2d, Dense, Graph, ParamStore, Tensor, Var};
use crate::env::{Snapshot, MINIMAP_LAYERS, NONSPATIAL_LEN, SCREEN_LAYERS, SPATIAL_LAYERS};
use crate::error::{Error, Result};

pub const STATE_DIM: usize = 256;
const NONSPATIAL_HIDDEN: usize = 64;

/// Two consecutive frames of one episode, older first.
#[derive(Debug, Clone, PartialEq)]
pub struct StateStack {
    pub prev: Snapshot,
    pub cur: Snapshot,
}

impl StateStack {
    pub fn new(prev: Snapshot, cur: Snapshot) -> Result<StateStack> {
        if prev.grid_size != cur.grid_size || prev.cells.len() != cur.cells.len() {
            return Err(Error::Dimension {
                op: "state stack",
                lhs: vec![prev.grid_size, prev.cells.len()],
                rhs: vec![cur.grid_size, cur.cells.len()],
            });
        }
        Ok(StateStack { prev, cur })
    }

    /// Stack whose older frame repeats the current one, used at episode start.
    pub fn initial(cur: Snapshot) -> StateStack {
        StateStack {
            prev: cur.clone(),
            cur,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.cur.grid_size
    }

    /// Shift in a new frame.
    pub fn push(&self, next: Snapshot) -> Result<StateStack> {
        StateStack::new(self.cur.clone(), next)
    }
}

/// Network inputs for a batch of stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBatch {
    /// `[B, 2 * SCREEN_LAYERS, G, G]`
    pub screen: Tensor,
    /// `[B, 2 * MINIMAP_LAYERS, G, G]`
    pub minimap: Tensor,
    /// `[B, 2 * NONSPATIAL_LEN]`
    pub nonspatial: Tensor,
}

impl StateBatch {
    pub fn from_stacks(stacks: &[&StateStack]) -> Result<StateBatch> {
        let first = stacks
            .first()
            .ok_or_else(|| Error::usage("empty state batch"))?;
        let g = first.grid_size();
        let plane = g * g;
        let b = stacks.len();
        let mut screen = Vec::with_capacity(b * 2 * SCREEN_LAYERS * plane);
        let mut minimap = Vec::with_capacity(b * 2 * MINIMAP_LAYERS * plane);
        let mut nonspatial = Vec::with_capacity(b * 2 * NONSPATIAL_LEN);
        for s in stacks {
            if s.grid_size() != g {
                return Err(Error::Dimension {
                    op: "state batch",
                    lhs: vec![g],
                    rhs: vec![s.grid_size()],
                });
            }
            let (p, c) = (s.prev.observation(), s.cur.observation());
            screen.extend_from_slice(p.screen());
            screen.extend_from_slice(c.screen());
            minimap.extend_from_slice(p.minimap());
            minimap.extend_from_slice(c.minimap());
            nonspatial.extend_from_slice(&p.nonspatial);
            nonspatial.extend_from_slice(&c.nonspatial);
        }
        Ok(StateBatch {
            screen: Tensor::new(&[b, 2 * SCREEN_LAYERS, g, g], screen)?,
            minimap: Tensor::new(&[b, 2 * MINIMAP_LAYERS, g, g], minimap)?,
            nonspatial: Tensor::new(&[b, 2 * NONSPATIAL_LEN], nonspatial)?,
        })
    }

    pub fn zeros(batch: usize, grid_size: usize) -> StateBatch {
        let g = grid_size;
        StateBatch {
            screen: Tensor::zeros(&[batch, 2 * SCREEN_LAYERS, g, g]),
            minimap: Tensor::zeros(&[batch, 2 * MINIMAP_LAYERS, g, g]),
            nonspatial: Tensor::zeros(&[batch, 2 * NONSPATIAL_LEN]),
        }
    }

    pub fn len(&self) -> usize {
        self.nonspatial.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateEncoder {
    pub grid_size: usize,
    pub screen: [Conv2d; 2],
    pub minimap: [Conv2d; 2],
    pub nonspatial: Dense,
    pub fusion: Dense,
}

impl StateEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        grid_size: usize,
        rng: &mut impl Rng,
    ) -> Result<StateEncoder> {
        let tower = |store: &mut ParamStore,
                     branch: &str,
                     channels: usize,
                     rng: &mut _|
         -> Result<[Conv2d; 2]> {
            Ok([
                Conv2d::new(
                    store,
                    &format!("{name}.{branch}.conv1"),
                    2 * channels,
                    16,
                    5,
                    2,
                    rng,
                )?,
                Conv2d::new(store, &format!("{name}.{branch}.conv2"), 16, 32, 3, 2, rng)?,
            ])
        };
        let screen = tower(store, "screen", SCREEN_LAYERS, rng)?;
        let minimap = tower(store, "minimap", MINIMAP_LAYERS, rng)?;
        let nonspatial = Dense::new(
            store,
            &format!("{name}.nonspatial"),
            2 * NONSPATIAL_LEN,
            NONSPATIAL_HIDDEN,
            rng,
        )?;
        let side = screen[1].out_size(screen[0].out_size(grid_size));
        let fused = 2 * 32 * side * side + NONSPATIAL_HIDDEN;
        let fusion = Dense::new(store, &format!("{name}.fusion"), fused, STATE_DIM, rng)?;
        Ok(StateEncoder {
            grid_size,
            screen,
            minimap,
            nonspatial,
            fusion,
        })
    }

    /// Embeddings `[B x 256]` for prepared inputs.
    pub fn forward(&self, g: &mut Graph, batch: &StateBatch) -> Result<Var> {
        let side = batch.screen.shape()[2];
        if side != self.grid_size {
            return Err(Error::Dimension {
                op: "state encoder grid",
                lhs: vec![self.grid_size],
                rhs: vec![side],
            });
        }
        let screen = g.input(batch.screen.clone());
        let minimap = g.input(batch.minimap.clone());
        let nonspatial = g.input(batch.nonspatial.clone());
        let s = self.tower(g, &self.screen, screen)?;
        let m = self.tower(g, &self.minimap, minimap)?;
        let n = self.nonspatial.forward(g, nonspatial)?;
        let n = g.relu(n);
        let joined = g.concat(&[s, m, n])?;
        self.fusion.forward(g, joined)
    }

    pub fn encode(&self, g: &mut Graph, stacks: &[&StateStack]) -> Result<Var> {
        self.forward(g, &StateBatch::from_stacks(stacks)?)
    }

    fn tower(&self, g: &mut Graph, convs: &[Conv2d; 2], x: Var) -> Result<Var> {
        let mut h = x;
        for c in convs {
            h = c.forward(g, h)?;
            h = g.relu(h);
        }
        g.flatten(h)
    }
}

const _: () = assert!(SPATIAL_LAYERS == SCREEN_LAYERS + MINIMAP_LAYERS);

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::{Cell, EnvConfig, MiniBuild};

    fn snapshot(grid: usize) -> Snapshot {
        let cfg = EnvConfig {
            grid_size: grid,
            build_radius: 1,
            ..EnvConfig::default()
        };
        MiniBuild::new(&cfg, 0).unwrap().snapshot()
    }

    fn embed(enc: &StateEncoder, store: &ParamStore, stack: &StateStack) -> Vec<f64> {
        let mut g = Graph::new(store);
        let x = enc.encode(&mut g, &[stack]).unwrap();
        g.data(x).to_vec()
    }

    #[test]
    fn output_is_256_for_several_grids() {
        for grid in [8, 32, 64] {
            let mut store = ParamStore::new();
            let enc = StateEncoder::new(&mut store, "s", grid, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
            let mut g = Graph::new(&store);
            let x = enc.forward(&mut g, &StateBatch::zeros(2, grid)).unwrap();
            assert_eq!(g.shape(x), &[2, STATE_DIM]);
        }
    }

    #[test]
    fn zero_input_and_bias_give_zero() {
        let mut store = ParamStore::new();
        let enc = StateEncoder::new(&mut store, "s", 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ids: Vec<_> = store
            .ids()
            .filter(|&id| store.name(id).ends_with(".b"))
            .collect();
        for id in ids {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new(&store);
        let x = enc.forward(&mut g, &StateBatch::zeros(1, 8)).unwrap();
        assert!(g.data(x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_depot_cell_changes_embedding() {
        let mut store = ParamStore::new();
        let enc =
            StateEncoder::new(&mut store, "s", 16, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let a = snapshot(16);
        let mut b = a.clone();
        let idx = b
            .cells
            .iter()
            .position(|&c| c == Cell::Empty as u8)
            .unwrap();
        b.cells[idx] = Cell::Depot as u8;
        let ea = embed(&enc, &store, &StateStack::initial(a.clone()));
        let eb = embed(&enc, &store, &StateStack::new(a, b).unwrap());
        let d: f64 = ea
            .iter()
            .zip(&eb)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(d > 1e-9);
    }

    #[test]
    fn frame_order_matters() {
        let mut store = ParamStore::new();
        let enc =
            StateEncoder::new(&mut store, "s", 16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let cfg = EnvConfig {
            grid_size: 16,
            build_radius: 1,
            ..EnvConfig::default()
        };
        let mut env = MiniBuild::new(&cfg, 0).unwrap();
        let a = env.snapshot();
        env.advance(crate::env::CompoundAction::simple(
            crate::env::ActionId::BuildWorker,
        ))
        .unwrap();
        let b = env.snapshot();
        let fwd = embed(
            &enc,
            &store,
            &StateStack::new(a.clone(), b.clone()).unwrap(),
        );
        let rev = embed(&enc, &store, &StateStack::new(b, a).unwrap());
        assert_ne!(fwd, rev);
    }

    #[test]
    fn mismatched_frames_rejected() {
        let r = StateStack::new(snapshot(8), snapshot(16));
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}
