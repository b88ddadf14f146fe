//! Fuse per-view probabilities into one symmetric pairwise posterior.
//!
//! The default aggregation is the odds-product formula, which is invariant
//! to view order, treats 0.5 as an uninformative no-op and tolerates any
//! subset of observed views. The named reductions (mean/max/min/multiply)
//! exist for ablation comparisons. Optional view completion synthesizes a
//! missing view's probability from the cross-view tables of at least two
//! observed anchor views before fusing.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::probfn::{eval_fjoint, PairTable, PiecewiseProbFn, TrainedModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Formula,
    Mean,
    Max,
    Min,
    Multiply,
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Aggregation::Formula => "formula",
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
            Aggregation::Min => "min",
            Aggregation::Multiply => "multiply",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "formula" => Ok(Aggregation::Formula),
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            "min" => Ok(Aggregation::Min),
            "multiply" => Ok(Aggregation::Multiply),
            other => Err(Error::InvalidInput(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Fused,
    Refined,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Fused => write!(f, "fused"),
            Provenance::Refined => write!(f, "refined"),
        }
    }
}

/// Sparse symmetric store of pairwise probabilities over the union-of-KNN
/// pair support. Frozen after construction; refinement passes produce new
/// graphs over the same topology.
#[derive(Debug, Clone)]
pub struct ProbGraph {
    n: usize,
    provenance: Provenance,
    pairs: Vec<(usize, usize)>,
    probs: Vec<f64>,
    adj: Vec<Vec<(usize, usize)>>,
    index: HashMap<(usize, usize), usize>,
}

impl ProbGraph {
    pub fn from_edges(
        n: usize,
        edges: Vec<(usize, usize, f64)>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut normalized: Vec<((usize, usize), f64)> = Vec::with_capacity(edges.len());
        for (i, j, p) in edges {
            if i == j {
                return Err(Error::InvalidInput(format!("self edge at sample {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({i}, {j}) out of range for n = {n}"
                )));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!(
                    "probability {p} outside [0, 1] on edge ({i}, {j})"
                )));
            }
            normalized.push(((i.min(j), i.max(j)), p));
        }
        normalized.sort_by_key(|&(pair, _)| pair);
        normalized.dedup_by_key(|&mut (pair, _)| pair);
        let pairs: Vec<(usize, usize)> = normalized.iter().map(|&(pair, _)| pair).collect();
        let probs: Vec<f64> = normalized.iter().map(|&(_, p)| p).collect();
        let mut adj = vec![Vec::new(); n];
        let mut index = HashMap::with_capacity(pairs.len());
        for (e, &(i, j)) in pairs.iter().enumerate() {
            adj[i].push((j, e));
            adj[j].push((i, e));
            index.insert((i, j), e);
        }
        for list in &mut adj {
            list.sort_unstable_by_key(|&(nbr, _)| nbr);
        }
        Ok(Self {
            n,
            provenance,
            pairs,
            probs,
            adj,
            index,
        })
    }

    /// Same topology, new probabilities.
    pub fn with_probs(&self, probs: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if probs.len() != self.probs.len() {
            return Err(Error::Shape(format!(
                "{} probabilities for {} edges",
                probs.len(),
                self.probs.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput("probability outside [0, 1]".into()));
        }
        Ok(Self {
            probs,
            provenance,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn prob(&self, i: usize, j: usize) -> Option<f64> {
        self.index
            .get(&(i.min(j), i.max(j)))
            .map(|&e| self.probs[e])
    }

    pub fn edge_prob(&self, edge: usize) -> f64 {
        self.probs[edge]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `(neighbor, edge index)` pairs of a sample, ascending by neighbor.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adj[i]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pairs
            .iter()
            .zip(&self.probs)
            .map(|(&(i, j), &p)| (i, j, p))
    }

    /// CSV with a one-line `#` header recording provenance and aggregation.
    pub fn write_csv(&self, aggregation: &str, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(
            out,
            "# provenance={} aggregation={} n={}",
            self.provenance, aggregation, self.n
        )?;
        for (i, j, p) in self.edges() {
            writeln!(out, "{i},{j},{p}")?;
        }
        Ok(())
    }

    pub fn read_csv(reader: &mut dyn BufRead) -> Result<(Self, String)> {
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| Error::InvalidInput(format!("graph csv: {e}")))?;
        let mut provenance = Provenance::Fused;
        let mut aggregation = String::from("unknown");
        let mut n = None;
        if let Some(rest) = header.trim().strip_prefix('#') {
            for token in rest.split_whitespace() {
                if let Some((key, value)) = token.split_once('=') {
                    match key {
                        "provenance" if value == "refined" => provenance = Provenance::Refined,
                        "provenance" => provenance = Provenance::Fused,
                        "aggregation" => aggregation = value.to_string(),
                        "n" => {
                            n = Some(value.parse::<usize>().map_err(|e| {
                                Error::InvalidInput(format!("graph csv header n: {e}"))
                            })?)
                        }
                        _ => {}
                    }
                }
            }
        } else {
            return Err(Error::InvalidInput(
                "graph csv is missing its # header".into(),
            ));
        }
        let n = n.ok_or_else(|| Error::InvalidInput("graph csv header lacks n".into()))?;
        let mut edges = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidInput(format!("graph csv: {e}")))?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut cells = trimmed.split(',');
            let mut next = |what: &str| {
                cells
                    .next()
                    .ok_or_else(|| {
                        Error::InvalidInput(format!("graph csv line {}: missing {what}", idx + 2))
                    })
                    .and_then(|c| {
                        c.trim().parse::<f64>().map_err(|e| {
                            Error::InvalidInput(format!("graph csv line {}: {e}", idx + 2))
                        })
                    })
            };
            let i = next("i")? as usize;
            let j = next("j")? as usize;
            let p = next("p")?;
            edges.push((i, j, p));
        }
        Ok((Self::from_edges(n, edges, provenance)?, aggregation))
    }
}

/// Pair support for fusion: sample pairs with per-view similarities where
/// observed. This is the serializable slice of a [`PairTable`] that the
/// standalone fuse stage consumes.
#[derive(Debug, Clone)]
pub struct PairList {
    n: usize,
    pairs: Vec<(usize, usize)>,
    sims: Vec<Vec<Option<f64>>>,
}

impl PairList {
    pub fn new(n: usize, pairs: Vec<(usize, usize)>, sims: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if pairs.len() != sims.len() {
            return Err(Error::Shape(format!(
                "{} pairs with {} similarity rows",
                pairs.len(),
                sims.len()
            )));
        }
        Ok(Self { n, pairs, sims })
    }

    pub fn from_table(table: &PairTable) -> Self {
        let pairs = table.pairs().to_vec();
        let sims = (0..table.n_pairs())
            .map(|t| {
                (0..table.n_views())
                    .map(|m| table.similarity(t, m))
                    .collect()
            })
            .collect();
        Self {
            n: table.n_samples(),
            pairs,
            sims,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_views(&self) -> usize {
        self.sims.first().map(|row| row.len()).unwrap_or(0)
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "# n={} views={}", self.n, self.n_views())?;
        for (t, &(p, q)) in self.pairs.iter().enumerate() {
            let mut line = format!("{p},{q}");
            for w in &self.sims[t] {
                match w {
                    Some(w) => line.push_str(&format!(",{w}")),
                    None => line.push(','),
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv(reader: &mut dyn BufRead) -> Result<Self> {
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| Error::InvalidInput(format!("pair csv: {e}")))?;
        let mut n = None;
        let mut views = None;
        if let Some(rest) = header.trim().strip_prefix('#') {
            for token in rest.split_whitespace() {
                if let Some((key, value)) = token.split_once('=') {
                    let parsed = value
                        .parse::<usize>()
                        .map_err(|e| Error::InvalidInput(format!("pair csv header: {e}")))?;
                    match key {
                        "n" => n = Some(parsed),
                        "views" => views = Some(parsed),
                        _ => {}
                    }
                }
            }
        }
        let (n, views) = match (n, views) {
            (Some(n), Some(v)) => (n, v),
            _ => {
                return Err(Error::InvalidInput(
                    "pair csv header must carry n= and views=".into(),
                ))
            }
        };
        let mut pairs = Vec::new();
        let mut sims = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidInput(format!("pair csv: {e}")))?;
            let trimmed = line.trim_end();
            if trimmed.is_empty() {
                continue;
            }
            let cells: Vec<&str> = trimmed.split(',').collect();
            if cells.len() != 2 + views {
                return Err(Error::InvalidInput(format!(
                    "pair csv line {}: {} cells, expected {}",
                    idx + 2,
                    cells.len(),
                    2 + views
                )));
            }
            let parse = |c: &str| {
                c.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidInput(format!("pair csv line {}: {e}", idx + 2)))
            };
            let p = parse(cells[0])?;
            let q = parse(cells[1])?;
            let mut row = Vec::with_capacity(views);
            for cell in &cells[2..] {
                let cell = cell.trim();
                if cell.is_empty() {
                    row.push(None);
                } else {
                    row.push(Some(cell.parse::<f64>().map_err(|e| {
                        Error::InvalidInput(format!("pair csv line {}: {e}", idx + 2))
                    })?));
                }
            }
            pairs.push((p, q));
            sims.push(row);
        }
        Self::new(n, pairs, sims)
    }
}

fn aggregate(aggregation: Aggregation, values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let out = match aggregation {
        Aggregation::Formula => eval_fjoint(values),
        Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregation::Max => values.iter().cloned().fold(f64::MIN, f64::max),
        Aggregation::Min => values.iter().cloned().fold(f64::MAX, f64::min),
        Aggregation::Multiply => values.iter().product(),
    };
    out.clamp(0.0, 1.0)
}

/// Fuse each pair's observed per-view probabilities into one posterior.
pub fn fuse(
    pairs: &PairList,
    fns: &[PiecewiseProbFn],
    aggregation: Aggregation,
) -> Result<ProbGraph> {
    fuse_inner(pairs, fns, None, aggregation)
}

/// Fuse with view completion: any view missing for a pair is filled from the
/// cross-view tables when at least two observed anchors exist; pairs with
/// fewer anchors fuse over their observed views only.
pub fn fuse_completed(
    pairs: &PairList,
    model: &TrainedModel,
    aggregation: Aggregation,
) -> Result<ProbGraph> {
    fuse_inner(pairs, &model.functions, Some(&model.cross), aggregation)
}

fn fuse_inner(
    pairs: &PairList,
    fns: &[PiecewiseProbFn],
    cross: Option<&[Vec<Vec<f64>>]>,
    aggregation: Aggregation,
) -> Result<ProbGraph> {
    if pairs.n_views() != fns.len() {
        return Err(Error::Shape(format!(
            "{} views in pair list, {} functions",
            pairs.n_views(),
            fns.len()
        )));
    }
    let m_count = fns.len();
    let mut edges = Vec::with_capacity(pairs.pairs.len());
    let mut values = Vec::with_capacity(m_count);
    let mut anchors = Vec::with_capacity(m_count);
    for (t, &(p, q)) in pairs.pairs.iter().enumerate() {
        values.clear();
        anchors.clear();
        for m in 0..m_count {
            if let Some(w) = pairs.sims[t][m] {
                let seg = fns[m].segment_of(w);
                values.push(fns[m].values[seg]);
                anchors.push((m, seg));
            }
        }
        if values.is_empty() {
            return Err(Error::InvalidInput(format!(
                "pair ({p}, {q}) is observed in no view"
            )));
        }
        if let Some(cross) = cross {
            for target in 0..m_count {
                if pairs.sims[t][target].is_none() {
                    if let Some(f) = complete_view(cross, &anchors, target) {
                        values.push(f);
                    }
                }
            }
        }
        edges.push((p, q, aggregate(aggregation, &values)));
    }
    ProbGraph::from_edges(pairs.n, edges, Provenance::Fused)
}

/// Synthesize a missing view's probability as the geometric mean of the
/// anchors' cross-view entries toward the target, looked up at the pair's
/// anchor segments. Needs at least two anchors; otherwise completion is
/// skipped.
pub fn complete_view(
    cross: &[Vec<Vec<f64>>],
    anchors: &[(usize, usize)],
    target: usize,
) -> Option<f64> {
    if anchors.len() < 2 {
        return None;
    }
    let mut product = 1.0;
    for &(anchor, seg) in anchors {
        product *= cross[anchor][target][seg];
    }
    Some(product.powf(1.0 / anchors.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_fn(view: usize, value: f64) -> PiecewiseProbFn {
        // Three segments valued (0, value, 1); the middle covers [0.25, 0.75).
        PiecewiseProbFn::new(
            view,
            vec![0.0, 0.25, 0.75, 1.0],
            vec![0.1, 0.5, 0.9],
            vec![0.0, value, 1.0],
        )
        .unwrap()
    }

    fn pair_list(sims: Vec<Vec<Option<f64>>>) -> PairList {
        let pairs = (0..sims.len()).map(|t| (0, t + 1)).collect();
        PairList::new(sims.len() + 1, pairs, sims).unwrap()
    }

    #[test]
    fn aggregations_match_hand_values() {
        let fns = vec![const_fn(0, 0.8), const_fn(1, 0.8)];
        let list = pair_list(vec![vec![Some(0.5), Some(0.5)]]);
        let cases = [
            (Aggregation::Formula, 0.64 / 0.68),
            (Aggregation::Mean, 0.8),
            (Aggregation::Max, 0.8),
            (Aggregation::Min, 0.8),
            (Aggregation::Multiply, 0.64),
        ];
        for (agg, expected) in cases {
            let g = fuse(&list, &fns, agg).unwrap();
            let got = g.prob(0, 1).unwrap();
            assert!((got - expected).abs() < 1e-9, "{agg}: {got} vs {expected}");
        }
    }

    #[test]
    fn uninformative_half_is_neutral() {
        let fns = vec![const_fn(0, 0.5), const_fn(1, 0.5)];
        let list = pair_list(vec![vec![Some(0.5), Some(0.5)]]);
        let g = fuse(&list, &fns, Aggregation::Formula).unwrap();
        assert!((g.prob(0, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_view_reduces_to_observed_value() {
        let fns = vec![const_fn(0, 0.8), const_fn(1, 0.3)];
        let list = pair_list(vec![vec![Some(0.5), None]]);
        for agg in [
            Aggregation::Formula,
            Aggregation::Mean,
            Aggregation::Max,
            Aggregation::Min,
            Aggregation::Multiply,
        ] {
            let g = fuse(&list, &fns, agg).unwrap();
            assert!((g.prob(0, 1).unwrap() - 0.8).abs() < 1e-9, "{agg}");
        }
    }

    #[test]
    fn zero_view_pair_is_an_error() {
        let fns = vec![const_fn(0, 0.8), const_fn(1, 0.3)];
        let list = pair_list(vec![vec![None, None]]);
        assert!(fuse(&list, &fns, Aggregation::Formula).is_err());
    }

    #[test]
    fn completion_takes_geometric_mean_of_anchors() {
        // cross[anchor][target][segment]
        let cross = vec![
            vec![vec![], vec![0.0, 0.0], vec![0.64, 0.64]],
            vec![vec![0.0, 0.0], vec![], vec![0.81, 0.81]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![]],
        ];
        let anchors = [(0usize, 0usize), (1usize, 1usize)];
        let f = complete_view(&cross, &anchors, 2).unwrap();
        assert!((f - 0.72).abs() < 1e-12);
        assert!(complete_view(&cross, &anchors[..1], 2).is_none());
        let equal = vec![
            vec![vec![], vec![0.0, 0.0], vec![0.4, 0.4]],
            vec![vec![0.0, 0.0], vec![], vec![0.4, 0.4]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![]],
        ];
        let f = complete_view(&equal, &[(0, 0), (1, 0)], 2);
        assert!((f.unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn fuse_with_completion_fills_missing_views() {
        use crate::probfn::{train_profile, TrainedModel};
        // Three views; the pair observes views 0 and 1 only. Completion
        // should look up cross tables at the anchors' segments and add a
        // synthesized third value before aggregation.
        let fns = vec![const_fn(0, 0.8), const_fn(1, 0.8), const_fn(2, 0.9)];
        let fill = |v: f64| vec![vec![v; 3]; 3];
        let cross = vec![
            vec![vec![], fill(0.5)[0].clone(), vec![0.64, 0.64, 0.64]],
            vec![fill(0.5)[0].clone(), vec![], vec![0.81, 0.81, 0.81]],
            vec![fill(0.5)[0].clone(), fill(0.5)[0].clone(), vec![]],
        ];
        let model = TrainedModel {
            config: train_profile("synth").unwrap(),
            functions: fns.clone(),
            cross,
            log: Vec::new(),
        };
        let list = pair_list(vec![vec![Some(0.5), Some(0.5), None]]);
        let plain = fuse(&list, &fns, Aggregation::Formula).unwrap();
        let completed = fuse_completed(&list, &model, Aggregation::Formula).unwrap();
        // Plain fusion: joint(0.8, 0.8); completed adds sqrt(0.64*0.81)=0.72.
        let expected_plain = 0.64 / 0.68;
        let a = 0.8f64 * 0.8 * 0.72;
        let b = 0.2f64 * 0.2 * 0.28;
        let expected_completed = a / (a + b);
        assert!((plain.prob(0, 1).unwrap() - expected_plain).abs() < 1e-9);
        assert!((completed.prob(0, 1).unwrap() - expected_completed).abs() < 1e-9);
    }

    #[test]
    fn graph_csv_round_trips() {
        let g = ProbGraph::from_edges(
            4,
            vec![(0, 1, 0.9), (2, 3, 0.25), (1, 2, 0.5)],
            Provenance::Refined,
        )
        .unwrap();
        let mut buf = Vec::new();
        g.write_csv("formula", &mut buf).unwrap();
        let (back, agg) = ProbGraph::read_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(agg, "formula");
        assert_eq!(back.provenance(), Provenance::Refined);
        assert_eq!(back.n(), 4);
        assert_eq!(back.prob(3, 2), Some(0.25));
        assert_eq!(back.prob(1, 0), Some(0.9));
        assert_eq!(back.prob(0, 3), None);
    }

    #[test]
    fn pair_list_csv_round_trips_missing_views() {
        let list = pair_list(vec![
            vec![Some(0.5), None],
            vec![Some(0.125), Some(0.75)],
        ]);
        let mut buf = Vec::new();
        list.write_csv(&mut buf).unwrap();
        let back = PairList::read_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(back.n(), list.n());
        assert_eq!(back.pairs, list.pairs);
        assert_eq!(back.sims, list.sims);
    }

    #[test]
    fn graph_rejects_bad_edges() {
        assert!(ProbGraph::from_edges(3, vec![(0, 0, 0.5)], Provenance::Fused).is_err());
        assert!(ProbGraph::from_edges(3, vec![(0, 5, 0.5)], Provenance::Fused).is_err());
        assert!(ProbGraph::from_edges(3, vec![(0, 1, 1.5)], Provenance::Fused).is_err());
    }

    #[test]
    fn graph_adjacency_is_symmetric() {
        let g = ProbGraph::from_edges(
            4,
            vec![(0, 1, 0.9), (1, 2, 0.4), (0, 3, 0.2)],
            Provenance::Fused,
        )
        .unwrap();
        assert_eq!(g.neighbors(0).len(), 2);
        assert_eq!(g.neighbors(1).len(), 2);
        assert_eq!(g.prob(1, 0), g.prob(0, 1));
        let (nbr, edge) = g.neighbors(2)[0];
        assert_eq!(nbr, 1);
        assert_eq!(g.edge_prob(edge), 0.4);
    }
}
