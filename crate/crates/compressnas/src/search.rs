//! Rank search: proposal generation over the rank grid, lookup-table
//! construction (decompose + score every proposal), an exact
//! multiple-choice-knapsack solve of the rank-selection ILP via dynamic
//! programming over integer flash savings, and application of the
//! winning selection to the graph.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::decompose::{factors_to_layers, tucker2_decompose, DecomposeError};
use crate::estimate::{delta_flash, mse_proxy, Calibration, EstimateError, ProxyMode};
use crate::exec::{ExecError, WeightResolver};
use crate::model::{LayerKind, LayerSpec, ModelError, ModelGraph};

/// Environment variable capping proposal-evaluation parallelism
/// (0 or unset = automatic).
pub const THREADS_ENV: &str = "COMPRESSNAS_THREADS";

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("budget infeasible: need {required_saving} parameter savings, \
             at most {achievable_saving} available (shortfall {shortfall})")]
    Infeasible {
        required_saving: u64,
        achievable_saving: u64,
        shortfall: u64,
    },
    #[error("lookup table was built for fingerprint {expected}, graph has {actual}")]
    FingerprintMismatch { expected: String, actual: String },
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("table is missing layer '{0}' referenced by the selection")]
    MissingLayer(String),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("lookup table format error: {0}")]
    TableFormat(String),
}

/// Chosen rank for one layer; `Keep` leaves it undecomposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rank {
    Keep,
    Decompose(usize),
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rank::Keep => f.write_str("keep"),
            Rank::Decompose(r) => write!(f, "{r}"),
        }
    }
}

impl Serialize for Rank {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Rank::Keep => serializer.serialize_str("keep"),
            Rank::Decompose(r) => serializer.serialize_u64(*r as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Rank {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        match value {
            serde_json::Value::String(s) if s == "keep" => Ok(Rank::Keep),
            serde_json::Value::Number(n) => n
                .as_u64()
                .filter(|&r| r >= 1)
                .map(|r| Rank::Decompose(r as usize))
                .ok_or_else(|| serde::de::Error::custom("rank must be a positive integer")),
            other => Err(serde::de::Error::custom(format!(
                "rank must be \"keep\" or a positive integer, got {other}"
            ))),
        }
    }
}

/// One (layer, rank) entry of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankProposal {
    pub layer_id: String,
    pub rank: Rank,
    pub delta_flash: i64,
    pub delta_accuracy: f64,
}

impl RankProposal {
    pub fn keep(layer_id: &str) -> Self {
        RankProposal {
            layer_id: layer_id.to_string(),
            rank: Rank::Keep,
            delta_flash: 0,
            delta_accuracy: 0.0,
        }
    }
}

/// Proposals for one layer: the KEEP entry first, then ranks ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProposals {
    pub layer_id: String,
    pub proposals: Vec<RankProposal>,
}

/// The NAS search space: per-layer proposal lists in graph topological
/// order, pinned to one graph revision.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub fingerprint: String,
    pub seed: u64,
    pub original_params: u64,
    pub layers: Vec<LayerProposals>,
    /// Proposals whose evaluation failed, kept for the record.
    pub infeasible: Vec<(String, usize, String)>,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchConfig {
    /// Budget on the resulting model flash, in parameter-count units.
    pub flash_max: u64,
    pub rank_start: usize,
    pub rank_step: usize,
    /// DP weight quantization in parameter-count units; savings are
    /// rounded down so the budget is never violated.
    pub granularity: u64,
    pub seed: u64,
    pub calib_batch: usize,
    pub hooi_iters: usize,
    pub proxy_mode: ProxyMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            flash_max: u64::MAX,
            rank_start: 8,
            rank_step: 8,
            granularity: 256,
            seed: 42,
            calib_batch: 8,
            hooi_iters: 2,
            proxy_mode: ProxyMode::Relative,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if !matches!(self.rank_step, 4 | 8) {
            return Err(SearchError::InvalidConfig(format!(
                "rank step must be 4 or 8, got {}",
                self.rank_step
            )));
        }
        if self.granularity == 0 {
            return Err(SearchError::InvalidConfig("granularity must be >= 1".into()));
        }
        if self.calib_batch == 0 {
            return Err(SearchError::InvalidConfig("calibration batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// The chosen proposal per layer and its totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub fingerprint: String,
    pub flash_max: u64,
    pub choices: BTreeMap<String, RankProposal>,
    pub total_delta_flash: i64,
    pub total_delta_accuracy: f64,
    pub resulting_flash: u64,
}

/// Rank grid for one layer: `{rank_start, +step, ...}` up to
/// `min(N, M)`, keeping only ranks with a strictly positive flash
/// delta. Non-decomposable layers (and k < 3) yield an empty grid.
pub fn generate_proposals(layer: &LayerSpec, cfg: &SearchConfig) -> Vec<usize> {
    if layer.kind != LayerKind::Conv || !layer.decomposable || layer.k() < 3 {
        return Vec::new();
    }
    let cap = layer.in_channels.min(layer.out_channels);
    let mut ranks = Vec::new();
    let mut r = cfg.rank_start;
    while r <= cap {
        if delta_flash(layer.in_channels, layer.out_channels, layer.k(), r) > 0 {
            ranks.push(r);
        }
        r += cfg.rank_step;
    }
    ranks
}

fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0)
}

/// Decompose and score every proposal of every decomposable layer.
/// Evaluations run in parallel; the result is assembled in (layer
/// topological index, rank) order and is deterministic for a fixed
/// (graph, seed, config).
pub fn build_lookup_table(
    graph: &ModelGraph,
    calib: &Calibration,
    cfg: &SearchConfig,
    resolver: &WeightResolver,
) -> Result<LookupTable, SearchError> {
    cfg.validate()?;
    let fingerprint = graph.fingerprint();
    if calib.fingerprint != fingerprint {
        return Err(SearchError::FingerprintMismatch {
            expected: calib.fingerprint.clone(),
            actual: fingerprint,
        });
    }

    let tasks: Vec<(&LayerSpec, Vec<usize>)> = graph
        .layers
        .iter()
        .filter(|l| l.kind == LayerKind::Conv && l.decomposable && l.k() >= 3)
        .map(|l| (l, generate_proposals(l, cfg)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap())
        .build()
        .map_err(|e| SearchError::InvalidConfig(e.to_string()))?;

    type Scored = Result<RankProposal, (String, usize, String)>;
    let flat: Vec<(usize, usize, Scored)> = pool.install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .enumerate()
            .flat_map(|(li, (layer, ranks))| {
                ranks
                    .par_iter()
                    .map(move |&rank| {
                        let scored = score_proposal(graph, layer, rank, calib, cfg, resolver)
                            .map_err(|e| (layer.id.clone(), rank, e.to_string()));
                        (li, rank, scored)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    });

    let mut per_layer: Vec<Vec<(usize, Scored)>> = vec![Vec::new(); tasks.len()];
    for (li, rank, scored) in flat {
        per_layer[li].push((rank, scored));
    }
    let mut layers = Vec::with_capacity(tasks.len());
    let mut infeasible = Vec::new();
    for ((layer, _), mut entries) in tasks.iter().zip(per_layer) {
        entries.sort_by_key(|(rank, _)| *rank);
        let mut proposals = vec![RankProposal::keep(&layer.id)];
        for (_rank, scored) in entries {
            match scored {
                Ok(p) => proposals.push(p),
                Err((id, r, msg)) => infeasible.push((id, r, msg)),
            }
        }
        layers.push(LayerProposals {
            layer_id: layer.id.clone(),
            proposals,
        });
    }
    Ok(LookupTable {
        fingerprint,
        seed: cfg.seed,
        original_params: graph.param_count(),
        layers,
        infeasible,
    })
}

fn score_proposal(
    graph: &ModelGraph,
    layer: &LayerSpec,
    rank: usize,
    calib: &Calibration,
    cfg: &SearchConfig,
    resolver: &WeightResolver,
) -> Result<RankProposal, SearchError> {
    let kernel = resolver.conv_kernel(layer)?;
    let factors = tucker2_decompose(&kernel, rank, cfg.hooi_iters)?;
    let score = mse_proxy(graph, &layer.id, &factors, calib, resolver)?;
    Ok(RankProposal {
        layer_id: layer.id.clone(),
        rank: Rank::Decompose(rank),
        delta_flash: delta_flash(layer.in_channels, layer.out_channels, layer.k(), rank),
        delta_accuracy: score.delta(cfg.proxy_mode),
    })
}

/// Exact multiple-choice knapsack: maximize the summed accuracy deltas
/// subject to the resulting model flash staying within `flash_max`,
/// choosing exactly one proposal per layer.
///
/// The budget is converted to a minimum required parameter saving and
/// solved by DP over savings quantized at `granularity` (rounded down,
/// so a feasible DP answer can never violate the true budget). Ties
/// break toward larger savings (smaller resulting flash), then toward
/// the lexicographically smallest per-layer choice indices.
pub fn solve_mckp(table: &LookupTable, cfg: &SearchConfig) -> Result<Selection, SearchError> {
    cfg.validate()?;
    for lp in &table.layers {
        if let Some(p) = lp.proposals.iter().find(|p| p.delta_flash < 0) {
            return Err(SearchError::TableFormat(format!(
                "layer '{}' rank {} has negative flash saving {}; \
                 such proposals must be pruned before solving",
                p.layer_id, p.rank, p.delta_flash
            )));
        }
    }
    let required = table.original_params.saturating_sub(cfg.flash_max);
    let g = cfg.granularity;
    let target = required.div_ceil(g) as usize;

    // Quantized weight per proposal, saturated at the target.
    let weights: Vec<Vec<usize>> = table
        .layers
        .iter()
        .map(|lp| {
            lp.proposals
                .iter()
                .map(|p| ((p.delta_flash.max(0) as u64 / g) as usize).min(target))
                .collect()
        })
        .collect();

    #[derive(Clone, Copy)]
    struct Cell {
        acc: f64,
        savings: i64,
        choice: u32,
        prev_state: u32,
        reachable: bool,
    }
    let empty = Cell {
        acc: 0.0,
        savings: 0,
        choice: 0,
        prev_state: 0,
        reachable: false,
    };
    let states = target + 1;
    let num_layers = table.layers.len();
    // dp[layer][state]: best prefix ending with saturated savings == state.
    let mut dp: Vec<Vec<Cell>> = Vec::with_capacity(num_layers + 1);
    let mut first = vec![empty; states];
    first[0].reachable = true;
    dp.push(first);

    for (li, lp) in table.layers.iter().enumerate() {
        let mut row = vec![empty; states];
        #[allow(clippy::needless_range_loop)]
        for s in 0..states {
            let prev = dp[li][s];
            if !prev.reachable {
                continue;
            }
            for (ci, proposal) in lp.proposals.iter().enumerate() {
                let ns = (s + weights[li][ci]).min(target);
                let cand = Cell {
                    acc: prev.acc + proposal.delta_accuracy,
                    savings: prev.savings + proposal.delta_flash,
                    choice: ci as u32,
                    prev_state: s as u32,
                    reachable: true,
                };
                // Candidates arrive in ascending choice order; keeping
                // the incumbent on exact ties yields the
                // lexicographically smallest choice vector.
                let cur = &mut row[ns];
                let better = !cur.reachable
                    || cand.acc > cur.acc
                    || (cand.acc == cur.acc && cand.savings > cur.savings);
                if better {
                    *cur = cand;
                }
            }
        }
        dp.push(row);
    }

    let goal = dp[num_layers][target];
    if !goal.reachable {
        // Maximum achievable unquantized saving, for the report.
        let achievable: i64 = table
            .layers
            .iter()
            .map(|lp| {
                lp.proposals
                    .iter()
                    .map(|p| p.delta_flash.max(0))
                    .max()
                    .unwrap_or(0)
            })
            .sum();
        let achievable = achievable.max(0) as u64;
        return Err(SearchError::Infeasible {
            required_saving: required,
            achievable_saving: achievable,
            shortfall: required.saturating_sub(achievable),
        });
    }

    // Walk the parents back to recover the per-layer choices.
    let mut choices_rev = Vec::with_capacity(num_layers);
    let mut state = target;
    for li in (0..num_layers).rev() {
        let cell = dp[li + 1][state];
        choices_rev.push(cell.choice as usize);
        state = cell.prev_state as usize;
    }
    choices_rev.reverse();

    let mut choices = BTreeMap::new();
    let mut total_delta_flash = 0i64;
    let mut total_delta_accuracy = 0.0;
    for (lp, ci) in table.layers.iter().zip(choices_rev) {
        let p = lp.proposals[ci].clone();
        total_delta_flash += p.delta_flash;
        total_delta_accuracy += p.delta_accuracy;
        choices.insert(lp.layer_id.clone(), p);
    }
    let resulting_flash = (table.original_params as i64 - total_delta_flash) as u64;
    Ok(Selection {
        fingerprint: table.fingerprint.clone(),
        flash_max: cfg.flash_max,
        choices,
        total_delta_flash,
        total_delta_accuracy,
        resulting_flash,
    })
}

/// Apply the chosen decompositions, replacing each selected conv by
/// its factor triplet. The resulting parameter count equals the
/// original minus the summed (unquantized) flash deltas exactly.
pub fn apply_selection(
    graph: &ModelGraph,
    table: &LookupTable,
    selection: &Selection,
    cfg: &SearchConfig,
    resolver: &WeightResolver,
) -> Result<ModelGraph, SearchError> {
    let actual = graph.fingerprint();
    if table.fingerprint != actual || selection.fingerprint != actual {
        return Err(SearchError::FingerprintMismatch {
            expected: table.fingerprint.clone(),
            actual,
        });
    }
    let mut result = graph.clone();
    for lp in &table.layers {
        let choice = selection
            .choices
            .get(&lp.layer_id)
            .ok_or_else(|| SearchError::MissingLayer(lp.layer_id.clone()))?;
        let Rank::Decompose(rank) = choice.rank else {
            continue;
        };
        let layer = graph
            .layer(&lp.layer_id)
            .ok_or_else(|| SearchError::MissingLayer(lp.layer_id.clone()))?
            .clone();
        let kernel = resolver.conv_kernel(&layer)?;
        let factors = tucker2_decompose(&kernel, rank, cfg.hooi_iters)?;
        let triplet = factors_to_layers(&factors, &layer)?;
        result = result.replace_layer(&lp.layer_id, triplet.to_vec())?;
    }
    Ok(result)
}

/// CSV form of the lookup table: comment header carrying fingerprint,
/// seed, and original parameter count, then one row per proposal.
pub fn table_to_csv(table: &LookupTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# fingerprint={} seed={} original_params={}\n",
        table.fingerprint, table.seed, table.original_params
    ));
    for (layer_id, rank, reason) in &table.infeasible {
        out.push_str(&format!("# infeasible {layer_id} rank={rank}: {reason}\n"));
    }
    out.push_str("layer_id,rank,delta_flash,delta_accuracy\n");
    for lp in &table.layers {
        for p in &lp.proposals {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.layer_id, p.rank, p.delta_flash, p.delta_accuracy
            ));
        }
    }
    out
}

/// Parse the CSV form back into a table (infeasible records are not
/// round-tripped).
pub fn table_from_csv(text: &str) -> Result<LookupTable, SearchError> {
    let mut fingerprint = String::new();
    let mut seed = 0u64;
    let mut original_params = 0u64;
    let mut layers: Vec<LayerProposals> = Vec::new();
    let mut saw_header = false;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for token in meta.split_whitespace() {
                if let Some(v) = token.strip_prefix("fingerprint=") {
                    fingerprint = v.to_string();
                } else if let Some(v) = token.strip_prefix("seed=") {
                    seed = v
                        .parse()
                        .map_err(|_| SearchError::TableFormat(format!("bad seed at line {ln}")))?;
                } else if let Some(v) = token.strip_prefix("original_params=") {
                    original_params = v.parse().map_err(|_| {
                        SearchError::TableFormat(format!("bad original_params at line {ln}"))
                    })?;
                }
            }
            continue;
        }
        if !saw_header {
            if line != "layer_id,rank,delta_flash,delta_accuracy" {
                return Err(SearchError::TableFormat(format!(
                    "unexpected header at line {ln}: {line}"
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(SearchError::TableFormat(format!(
                "expected 4 fields at line {ln}, got {}",
                fields.len()
            )));
        }
        let rank = if fields[1] == "keep" {
            Rank::Keep
        } else {
            Rank::Decompose(fields[1].parse().map_err(|_| {
                SearchError::TableFormat(format!("bad rank at line {ln}: {}", fields[1]))
            })?)
        };
        let proposal = RankProposal {
            layer_id: fields[0].to_string(),
            rank,
            delta_flash: fields[2]
                .parse()
                .map_err(|_| SearchError::TableFormat(format!("bad delta_flash at line {ln}")))?,
            delta_accuracy: fields[3]
                .parse()
                .map_err(|_| SearchError::TableFormat(format!("bad delta_accuracy at line {ln}")))?,
        };
        match layers.last_mut() {
            Some(lp) if lp.layer_id == proposal.layer_id => lp.proposals.push(proposal),
            _ => layers.push(LayerProposals {
                layer_id: proposal.layer_id.clone(),
                proposals: vec![proposal],
            }),
        }
    }
    Ok(LookupTable {
        fingerprint,
        seed,
        original_params,
        layers,
        infeasible: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::Calibration;
    use crate::model::parse_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conv_layer(n: usize, m: usize, k: usize, decomposable: bool) -> LayerSpec {
        let graph = parse_model(&format!(
            r#"{{ "input_shape": [{n}, 8, 8], "layers": [
                {{ "id": "in", "kind": "input" }},
                {{ "id": "c", "kind": "conv", "in": {n}, "out": {m}, "k": {k},
                   "pad": 1, "inputs": ["in"], "decomposable": {decomposable} }}
            ] }}"#
        ))
        .unwrap();
        graph.layer("c").unwrap().clone()
    }

    #[test]
    fn proposal_grid_covers_positive_savings_only() {
        let cfg = SearchConfig::default();
        assert_eq!(
            generate_proposals(&conv_layer(64, 64, 3, true), &cfg),
            vec![8, 16, 24, 32, 40, 48, 56]
        );
        assert_eq!(generate_proposals(&conv_layer(16, 16, 3, true), &cfg), vec![8]);
        assert!(generate_proposals(&conv_layer(64, 64, 3, false), &cfg).is_empty());
        assert!(generate_proposals(&conv_layer(64, 64, 1, true), &cfg).is_empty());
        let fine = SearchConfig {
            rank_step: 4,
            rank_start: 4,
            ..SearchConfig::default()
        };
        let grid = generate_proposals(&conv_layer(32, 32, 3, true), &fine);
        assert_eq!(grid.first(), Some(&4));
        assert!(grid.iter().all(|&r| delta_flash(32, 32, 3, r) > 0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_step = SearchConfig {
            rank_step: 3,
            ..SearchConfig::default()
        };
        assert!(matches!(bad_step.validate(), Err(SearchError::InvalidConfig(_))));
        let bad_gran = SearchConfig {
            granularity: 0,
            ..SearchConfig::default()
        };
        assert!(matches!(bad_gran.validate(), Err(SearchError::InvalidConfig(_))));
    }

    fn toy_graph() -> crate::model::ModelGraph {
        parse_model(
            r#"{ "input_shape": [16, 10, 10], "layers": [
                { "id": "in", "kind": "input" },
                { "id": "c1", "kind": "conv", "in": 16, "out": 24, "k": 3, "pad": 1,
                  "inputs": ["in"], "decomposable": true, "weights": {"seed": 3} },
                { "id": "c2", "kind": "conv", "in": 24, "out": 24, "k": 3, "pad": 1,
                  "inputs": ["c1"], "decomposable": true, "weights": {"seed": 4} }
            ] }"#,
        )
        .unwrap()
    }

    #[test]
    fn lookup_table_is_sorted_and_deterministic() {
        let graph = toy_graph();
        let resolver = WeightResolver::default();
        let cfg = SearchConfig {
            calib_batch: 2,
            ..SearchConfig::default()
        };
        let calib = Calibration::seeded(&graph, &resolver, cfg.seed, cfg.calib_batch).unwrap();
        let a = build_lookup_table(&graph, &calib, &cfg, &resolver).unwrap();
        let b = build_lookup_table(&graph, &calib, &cfg, &resolver).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers.len(), 2);
        assert!(a.infeasible.is_empty());
        for lp in &a.layers {
            assert_eq!(lp.proposals[0].rank, Rank::Keep);
            assert_eq!(lp.proposals[0].delta_flash, 0);
            let ranks: Vec<_> = lp.proposals[1..]
                .iter()
                .map(|p| match p.rank {
                    Rank::Decompose(r) => r,
                    Rank::Keep => unreachable!(),
                })
                .collect();
            let mut sorted = ranks.clone();
            sorted.sort_unstable();
            assert_eq!(ranks, sorted);
            assert!(lp.proposals[1..].iter().all(|p| p.delta_flash > 0));
            assert!(lp.proposals[1..].iter().all(|p| p.delta_accuracy <= 0.0));
        }
    }

    #[test]
    fn lookup_table_rejects_stale_calibration() {
        let graph = toy_graph();
        let resolver = WeightResolver::default();
        let cfg = SearchConfig::default();
        let calib = Calibration::seeded(&graph, &resolver, 1, 1).unwrap();
        let mut edited = graph.clone();
        edited.layers[1].padding = 0;
        assert!(matches!(
            build_lookup_table(&edited, &calib, &cfg, &resolver),
            Err(SearchError::FingerprintMismatch { .. })
        ));
    }

    fn synthetic_table(rng: &mut ChaCha8Rng) -> LookupTable {
        let num_layers = rng.gen_range(1..=4);
        let mut layers = Vec::new();
        let mut original = 0u64;
        for li in 0..num_layers {
            let id = format!("c{li}");
            let layer_params = rng.gen_range(200..2000) as u64;
            original += layer_params;
            let mut proposals = vec![RankProposal::keep(&id)];
            for pi in 0..rng.gen_range(0..=4usize) {
                proposals.push(RankProposal {
                    layer_id: id.clone(),
                    rank: Rank::Decompose(8 * (pi + 1)),
                    delta_flash: rng.gen_range(0..layer_params as i64),
                    delta_accuracy: -rng.gen_range(0.0..1.0f64),
                });
            }
            layers.push(LayerProposals {
                layer_id: id,
                proposals,
            });
        }
        LookupTable {
            fingerprint: "test".into(),
            seed: 0,
            original_params: original,
            layers,
            infeasible: Vec::new(),
        }
    }

    /// Exhaustive reference: best (acc, savings) over every choice
    /// combination meeting the required saving, or None if infeasible.
    fn brute_force(table: &LookupTable, required: u64) -> Option<(f64, i64)> {
        let counts: Vec<usize> = table.layers.iter().map(|lp| lp.proposals.len()).collect();
        let mut best: Option<(f64, i64)> = None;
        let mut idx = vec![0usize; counts.len()];
        loop {
            let mut acc = 0.0;
            let mut savings = 0i64;
            for (lp, &ci) in table.layers.iter().zip(&idx) {
                acc += lp.proposals[ci].delta_accuracy;
                savings += lp.proposals[ci].delta_flash;
            }
            if savings >= required as i64 {
                let cand = (acc, savings);
                best = Some(match best {
                    None => cand,
                    Some(b) if cand.0 > b.0 || (cand.0 == b.0 && cand.1 > b.1) => cand,
                    Some(b) => b,
                });
            }
            // Odometer increment over the choice indices.
            let mut pos = 0;
            loop {
                if pos == counts.len() {
                    return best;
                }
                idx[pos] += 1;
                if idx[pos] < counts[pos] {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn mckp_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..200 {
            let table = synthetic_table(&mut rng);
            let required = rng.gen_range(0..=table.original_params / 2);
            let cfg = SearchConfig {
                flash_max: table.original_params - required,
                granularity: 1,
                ..SearchConfig::default()
            };
            let oracle = brute_force(&table, required);
            match (solve_mckp(&table, &cfg), oracle) {
                (Ok(sel), Some((acc, savings))) => {
                    assert!(
                        (sel.total_delta_accuracy - acc).abs() < 1e-9,
                        "case {case}: objective {} vs oracle {acc}",
                        sel.total_delta_accuracy
                    );
                    assert_eq!(sel.total_delta_flash, savings, "case {case}: savings");
                    assert!(sel.resulting_flash <= cfg.flash_max, "case {case}: budget");
                }
                (Err(SearchError::Infeasible { shortfall, .. }), None) => {
                    assert!(shortfall > 0, "case {case}: shortfall must be positive");
                }
                (got, oracle) => {
                    panic!("case {case}: solver {got:?} disagrees with oracle {oracle:?}");
                }
            }
        }
    }

    #[test]
    fn quantized_solutions_never_violate_the_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let table = synthetic_table(&mut rng);
            let required = rng.gen_range(0..=table.original_params / 2);
            let cfg = SearchConfig {
                flash_max: table.original_params - required,
                granularity: 256,
                ..SearchConfig::default()
            };
            if let Ok(sel) = solve_mckp(&table, &cfg) {
                assert!(sel.resulting_flash <= cfg.flash_max);
            }
        }
    }

    #[test]
    fn infeasible_budget_reports_shortfall() {
        let table = LookupTable {
            fingerprint: "test".into(),
            seed: 0,
            original_params: 1000,
            layers: vec![LayerProposals {
                layer_id: "c0".into(),
                proposals: vec![
                    RankProposal::keep("c0"),
                    RankProposal {
                        layer_id: "c0".into(),
                        rank: Rank::Decompose(8),
                        delta_flash: 100,
                        delta_accuracy: -0.1,
                    },
                ],
            }],
            infeasible: Vec::new(),
        };
        let cfg = SearchConfig {
            flash_max: 500,
            granularity: 1,
            ..SearchConfig::default()
        };
        match solve_mckp(&table, &cfg) {
            Err(SearchError::Infeasible {
                required_saving,
                achievable_saving,
                shortfall,
            }) => {
                assert_eq!(required_saving, 500);
                assert_eq!(achievable_saving, 100);
                assert_eq!(shortfall, 400);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn unconstrained_budget_keeps_everything() {
        let graph = toy_graph();
        let resolver = WeightResolver::default();
        let cfg = SearchConfig {
            calib_batch: 1,
            ..SearchConfig::default()
        };
        let calib = Calibration::seeded(&graph, &resolver, cfg.seed, cfg.calib_batch).unwrap();
        let table = build_lookup_table(&graph, &calib, &cfg, &resolver).unwrap();
        let sel = solve_mckp(&table, &cfg).unwrap();
        assert!(sel.choices.values().all(|p| p.rank == Rank::Keep));
        assert_eq!(sel.resulting_flash, table.original_params);
        assert_eq!(sel.total_delta_accuracy, 0.0);
    }

    #[test]
    fn apply_selection_accounts_exactly() {
        let graph = toy_graph();
        let resolver = WeightResolver::default();
        let cfg = SearchConfig {
            flash_max: graph.param_count() * 6 / 10,
            calib_batch: 2,
            granularity: 64,
            ..SearchConfig::default()
        };
        let calib = Calibration::seeded(&graph, &resolver, cfg.seed, cfg.calib_batch).unwrap();
        let table = build_lookup_table(&graph, &calib, &cfg, &resolver).unwrap();
        let sel = solve_mckp(&table, &cfg).unwrap();
        assert!(sel.choices.values().any(|p| p.rank != Rank::Keep));
        let compressed = apply_selection(&graph, &table, &sel, &cfg, &resolver).unwrap();
        compressed.validate().unwrap();
        assert_eq!(
            compressed.param_count() as i64,
            graph.param_count() as i64 - sel.total_delta_flash
        );
        assert_eq!(compressed.param_count(), sel.resulting_flash);
        assert!(compressed.param_count() <= cfg.flash_max);
    }

    #[test]
    fn apply_selection_rejects_wrong_graph() {
        let graph = toy_graph();
        let resolver = WeightResolver::default();
        let cfg = SearchConfig::default();
        let calib = Calibration::seeded(&graph, &resolver, cfg.seed, 1).unwrap();
        let table = build_lookup_table(&graph, &calib, &cfg, &resolver).unwrap();
        let sel = solve_mckp(&table, &cfg).unwrap();
        let mut edited = graph.clone();
        edited.layers[1].padding = 0;
        assert!(matches!(
            apply_selection(&edited, &table, &sel, &cfg, &resolver),
            Err(SearchError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trips_the_table() {
        let graph = toy_graph();
        let resolver = WeightResolver::default();
        let cfg = SearchConfig {
            calib_batch: 1,
            ..SearchConfig::default()
        };
        let calib = Calibration::seeded(&graph, &resolver, cfg.seed, cfg.calib_batch).unwrap();
        let table = build_lookup_table(&graph, &calib, &cfg, &resolver).unwrap();
        let csv = table_to_csv(&table);
        assert!(csv.starts_with("# fingerprint="));
        assert!(csv.contains("layer_id,rank,delta_flash,delta_accuracy"));
        let parsed = table_from_csv(&csv).unwrap();
        assert_eq!(parsed, table);
    }

    #[test]
    fn selection_json_round_trips() {
        let mut choices = BTreeMap::new();
        choices.insert("c1".to_string(), RankProposal::keep("c1"));
        choices.insert(
            "c2".to_string(),
            RankProposal {
                layer_id: "c2".into(),
                rank: Rank::Decompose(16),
                delta_flash: 32512,
                delta_accuracy: -0.015625,
            },
        );
        let sel = Selection {
            fingerprint: "abc".into(),
            flash_max: 100000,
            choices,
            total_delta_flash: 32512,
            total_delta_accuracy: -0.015625,
            resulting_flash: 67488,
        };
        let json = serde_json::to_string_pretty(&sel).unwrap();
        assert!(json.contains("\"rank\": \"keep\""));
        assert!(json.contains("\"rank\": 16"));
        let back: Selection = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sel);
    }

    #[test]
    fn negative_saving_proposals_are_rejected_by_the_solver() {
        let table = LookupTable {
            fingerprint: "test".into(),
            seed: 0,
            original_params: 100,
            layers: vec![LayerProposals {
                layer_id: "c0".into(),
                proposals: vec![RankProposal {
                    layer_id: "c0".into(),
                    rank: Rank::Decompose(64),
                    delta_flash: -128,
                    delta_accuracy: 0.0,
                }],
            }],
            infeasible: Vec::new(),
        };
        assert!(matches!(
            solve_mckp(&table, &SearchConfig::default()),
            Err(SearchError::TableFormat(_))
        ));
    }
}
