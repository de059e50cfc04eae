//! The full network: semantic encoders, fusion, hierarchical clustering,
//! memory retrieval, prediction heads and domain discriminators.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{Discriminator, ReversalGate};
use crate::autograd::{row_block, stack_rows, Tape, Var};
use crate::datasets::Window;
use crate::encoders::{normalized_adjacency, SemanticEncoder};
use crate::error::{Error, Result};
use crate::fusion::{reconstruction_loss, FusionModule};
use crate::hierarchy::{aggregate_labels, aux_loss, coarsen, Assigner, AuxLoss, ClusterConfig};
use crate::memory::{prediction_loss, CityRole, MemoryBank, PredictionHead};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Mat;
use crate::urban_graphs::MultiViewGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub features: usize,
    pub semantics: usize,
    pub common_slots: usize,
    pub private_slots: usize,
    /// Node counts of the coarse levels; empty means a single level.
    pub cluster_sizes: Vec<usize>,
    pub gat_heads: usize,
    /// Hidden width of every two-layer MLP.
    pub mlp_hidden: usize,
}

impl ModelConfig {
    /// Hidden 32, three views, 3+3 memory slots, clusters 100/10.
    pub fn paper() -> Self {
        ModelConfig {
            hidden_dim: 32,
            features: 2,
            semantics: 3,
            common_slots: 3,
            private_slots: 3,
            cluster_sizes: ClusterConfig::paper().level_sizes,
            gat_heads: 2,
            mlp_hidden: 128,
        }
    }

    /// Full-size widths with clusters scaled to a small target city.
    pub fn desk(target_nodes: usize) -> Self {
        ModelConfig { cluster_sizes: ClusterConfig::desk(target_nodes).level_sizes, ..Self::paper() }
    }

    pub fn levels(&self) -> usize {
        self.cluster_sizes.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.features == 0 || self.semantics == 0 || self.gat_heads == 0 || self.mlp_hidden == 0 {
            return Err(Error::invalid("model widths, features, semantics and heads must be positive"));
        }
        if self.common_slots == 0 {
            return Err(Error::invalid("at least one common memory slot is required"));
        }
        let mut prev = usize::MAX;
        for &s in &self.cluster_sizes {
            if s == 0 || s >= prev {
                return Err(Error::invalid(format!("cluster sizes {:?} must strictly decrease", self.cluster_sizes)));
            }
            prev = s;
        }
        Ok(())
    }
}

/// Precomputed per-city graph inputs.
#[derive(Clone, Debug)]
pub struct CityGraphs {
    /// Normalised adjacency with self-loops, per view.
    pub a_hat: Vec<Mat>,
    /// Raw view adjacencies, the reconstruction targets.
    pub views: Vec<Mat>,
}

impl CityGraphs {
    pub fn new(graph: &MultiViewGraph) -> Result<Self> {
        let views: Vec<Mat> = graph.views.iter().map(|v| v.adjacency.clone()).collect();
        let a_hat = views.iter().map(normalized_adjacency).collect::<Result<_>>()?;
        Ok(CityGraphs { a_hat, views })
    }

    pub fn num_nodes(&self) -> usize {
        self.views[0].rows()
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoders: Vec<SemanticEncoder>,
    pub fusion: FusionModule,
    pub assigners: Vec<Assigner>,
    pub memory: MemoryBank,
    pub heads: Vec<PredictionHead>,
    pub discriminators: Vec<Discriminator>,
}

/// Which optional terms a forward pass should build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub reconstruction: bool,
    pub auxiliary: bool,
}

impl ForwardOptions {
    pub const ALL: ForwardOptions = ForwardOptions { reconstruction: true, auxiliary: true };
    pub const PREDICT: ForwardOptions = ForwardOptions { reconstruction: false, auxiliary: false };
}

/// Everything one window's forward pass produces.
#[derive(Clone, Debug)]
pub struct CityForward {
    pub fused_adjacency: Var,
    pub assignments: Vec<Var>,
    pub queries: Vec<Var>,
    pub predictions: Vec<Var>,
    pub labels: Vec<Var>,
    pub aux: Vec<AuxLoss>,
    pub reconstruction: Option<Var>,
}

impl CityForward {
    /// `Σ_l L_pred^(l)`.
    pub fn prediction_loss(&self, tape: &mut Tape) -> Var {
        let mut total = prediction_loss(tape, self.predictions[0], self.labels[0]);
        for l in 1..self.predictions.len() {
            let term = prediction_loss(tape, self.predictions[l], self.labels[l]);
            total = tape.add(total, term);
        }
        total
    }

    /// `Σ_l L_aux^(l)`, or `None` for a single-level model.
    pub fn aux_loss(&self, tape: &mut Tape) -> Option<Var> {
        let mut it = self.aux.iter();
        let mut total = it.next()?.total;
        for a in it {
            total = tape.add(total, a.total);
        }
        Some(total)
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.hidden_dim;
        let encoders = (0..config.semantics)
            .map(|c| SemanticEncoder::new(&mut store, &format!("encoder{c}"), config.features, d, &mut rng))
            .collect();
        let fusion = FusionModule::new(&mut store, config.semantics, d, config.mlp_hidden, &mut rng);
        let assigners = config
            .cluster_sizes
            .iter()
            .enumerate()
            .map(|(l, &k)| Assigner::new(&mut store, l, d, config.gat_heads, k, &mut rng))
            .collect();
        let levels = config.levels();
        let memory = MemoryBank::new(&mut store, levels, d, config.common_slots, config.private_slots, &mut rng);
        let heads = (0..levels)
            .map(|l| PredictionHead::new(&mut store, l, d, config.mlp_hidden, config.features, &mut rng))
            .collect();
        let discriminators = (0..levels).map(|l| Discriminator::new(&mut store, l, d, config.mlp_hidden, &mut rng)).collect();
        Ok(Model { config, store, encoders, fusion, assigners, memory, heads, discriminators })
    }

    pub fn levels(&self) -> usize {
        self.config.levels()
    }

    pub fn check_city(&self, graphs: &CityGraphs) -> Result<()> {
        if graphs.views.len() != self.config.semantics {
            return Err(Error::invalid(format!(
                "city has {} semantic views, model expects {}",
                graphs.views.len(),
                self.config.semantics
            )));
        }
        if let Some(&first) = self.config.cluster_sizes.first() {
            if first >= graphs.num_nodes() {
                return Err(Error::invalid(format!(
                    "first cluster level has {first} nodes but the city only {}",
                    graphs.num_nodes()
                )));
            }
        }
        Ok(())
    }

    /// Forward pass of a batch of windows stacked row-wise into one graph
    /// per window. `a_hat` and `views` are the city's graph inputs already
    /// placed on the tape. Each level's head reads the updated embedding
    /// `Z + O`, the retrieved knowledge added to the node's own embedding.
    pub fn forward(
        &self,
        tape: &mut Tape,
        a_hat: &[Var],
        views: &[Var],
        windows: &[&Window],
        role: CityRole,
        opts: ForwardOptions,
    ) -> Result<CityForward> {
        let store = &self.store;
        let blocks = windows.len();
        let z_f = self.fuse_batch(tape, a_hat, windows)?;
        let a_f = self.fusion.fused_adjacency(tape, store, z_f, blocks);

        let reconstruction = if opts.reconstruction {
            let rec: Vec<Var> =
                (0..views.len()).map(|c| self.fusion.reconstruct_view(tape, store, z_f, c, blocks)).collect();
            let tiled: Vec<Var> = views.iter().map(|v| tape.concat_rows(&alloc::vec![*v; blocks])).collect();
            Some(reconstruction_loss(tape, &tiled, &rec))
        } else {
            None
        };

        let levels = self.levels();
        let mut out = CityForward {
            fused_adjacency: a_f,
            assignments: Vec::with_capacity(levels - 1),
            queries: Vec::with_capacity(levels),
            predictions: Vec::with_capacity(levels),
            labels: Vec::with_capacity(levels),
            aux: Vec::new(),
            reconstruction,
        };
        let (mut z, mut a) = (z_f, a_f);
        let mut y = tape.constant(stack_rows(&windows.iter().map(|w| w.y.clone()).collect::<Vec<_>>()));
        for l in 0..levels {
            let r = self.memory.retrieve(tape, store, z, l, role)?;
            out.queries.push(r.query);
            let updated = tape.add(z, r.output);
            out.predictions.push(self.heads[l].predict(tape, store, updated));
            out.labels.push(y);
            if l + 1 < levels {
                let s = self.assigners[l].assign(tape, store, a, z, blocks);
                if opts.auxiliary {
                    out.aux.push(aux_loss(tape, a, s, blocks));
                }
                y = aggregate_labels(tape, s, y, blocks);
                (z, a) = coarsen(tape, z, a, s, blocks);
                out.assignments.push(s);
            }
        }
        Ok(out)
    }

    /// Level-0 prediction in normalised units.
    pub fn predict(&self, graphs: &CityGraphs, window: &Window, role: CityRole) -> Result<Mat> {
        Ok(self.predict_batch(graphs, &[window], role)?.remove(0))
    }

    /// Level-0 predictions of several windows in one pass.
    pub fn predict_batch(&self, graphs: &CityGraphs, windows: &[&Window], role: CityRole) -> Result<Vec<Mat>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let a_hat: Vec<Var> = graphs.a_hat.iter().map(|m| tape.constant(m.clone())).collect();
        let z_f = self.fuse_batch(&mut tape, &a_hat, windows)?;
        let r = self.memory.retrieve(&mut tape, &self.store, z_f, 0, role)?;
        let updated = tape.add(z_f, r.output);
        let pred = self.heads[0].predict(&mut tape, &self.store, updated);
        let pred = tape.value(pred);
        Ok((0..windows.len()).map(|i| row_block(pred, windows.len(), i)).collect())
    }

    /// Encoders and fusion over a stacked batch: `Z_f`, one block per window.
    fn fuse_batch(&self, tape: &mut Tape, a_hat: &[Var], windows: &[&Window]) -> Result<Var> {
        let store = &self.store;
        let first = windows.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let n = first.y.rows();
        if let Some(bad) = windows.iter().find(|w| w.x.len() != first.x.len() || w.y.rows() != n) {
            return Err(Error::invalid(format!(
                "batch mixes window shapes: {} steps x {} nodes vs {} x {n}",
                bad.x.len(),
                bad.y.rows(),
                first.x.len()
            )));
        }
        let history: Vec<Var> = (0..first.x.len())
            .map(|t| tape.constant(stack_rows(&windows.iter().map(|w| w.x[t].clone()).collect::<Vec<_>>())))
            .collect();
        let semantic: Vec<Var> = self
            .encoders
            .iter()
            .zip(a_hat)
            .map(|(enc, a)| enc.encode(tape, store, *a, &history, windows.len()))
            .collect();
        let temporal = if windows.len() == 1 {
            first.temporal.clone()
        } else {
            let per_node: Vec<Mat> = windows.iter().map(|w| Mat::from_fn(n, w.temporal.cols(), |_, j| w.temporal[(0, j)])).collect();
            stack_rows(&per_node)
        };
        let temporal = tape.constant(temporal);
        self.fusion.fuse(tape, store, &semantic, temporal)
    }

    /// `Σ_l L_dom^(l)` over stacked per-level queries of both cities.
    pub fn domain_loss(&self, tape: &mut Tape, source_queries: &[Var], target_queries: &[Var]) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (l, disc) in self.discriminators.iter().enumerate() {
            let term = disc.domain_loss(tape, &self.store, ReversalGate::default(), source_queries[l], target_queries[l])?;
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
        total.ok_or_else(|| Error::invalid("model has no levels"))
    }

    /// Trainable scalars grouped by top-level module.
    pub fn parameter_breakdown(&self) -> Vec<(&'static str, usize)> {
        const MODULES: [(&str, &str); 7] = [
            ("encoders", "encoder"),
            ("fusion", "fusion"),
            ("clustering", "cluster"),
            ("memory", "memory"),
            ("heads", "head"),
            ("discriminators", "disc"),
            ("other", ""),
        ];
        let mut counts = [0usize; MODULES.len()];
        for (_, p) in self.store.iter() {
            let idx = MODULES.iter().position(|(_, prefix)| p.name.starts_with(prefix)).unwrap_or(MODULES.len() - 1);
            counts[idx] += p.value.len();
        }
        MODULES.iter().zip(counts).filter(|(_, c)| *c > 0).map(|((name, _), c)| (*name, c)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Names of the parameters frozen during fine-tuning.
    pub fn frozen_names(&self) -> Vec<&str> {
        self.store
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::CommonMemory)
            .map(|(_, p)| p.name.as_str())
            .collect()
    }
}
