//! Directed label-transition graphs: which labels images get fooled into.

use std::collections::BTreeMap;
use std::path::Path;

use crate::classifier::Model;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{fooling_rate, FoolingReport};
use crate::tensor::Tensor;

/// Edge (i, j) with weight w: w images whose clean prediction was i were
/// fooled into j. Self-loops are excluded; weights are positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGraph {
    num_labels: usize,
    class_names: Vec<String>,
    edges: BTreeMap<(usize, usize), usize>,
}

impl LabelGraph {
    /// Distills a fooling report into a graph. The report's identity
    /// transitions are dropped; the rest must sum to its fooled count.
    pub fn from_report(
        report: &FoolingReport,
        num_labels: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if class_names.len() != num_labels {
            return Err(Error::InvalidParameter(format!(
                "{} class names for {} labels",
                class_names.len(),
                num_labels
            )));
        }
        let mut edges = BTreeMap::new();
        for &(i, j, w) in &report.transitions {
            for label in [i, j] {
                if label >= num_labels {
                    return Err(Error::LabelOutOfRange {
                        label,
                        num_classes: num_labels,
                    });
                }
            }
            if i != j && w > 0 {
                edges.insert((i, j), w);
            }
        }
        let total: usize = edges.values().sum();
        assert_eq!(
            total, report.fooled,
            "edge weights must account for every fooled image"
        );
        Ok(Self {
            num_labels,
            class_names,
            edges,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn edges(&self) -> &BTreeMap<(usize, usize), usize> {
        &self.edges
    }

    pub fn total_weight(&self) -> usize {
        self.edges.values().sum()
    }

    pub fn weighted_indegree(&self, label: usize) -> usize {
        self.edges
            .iter()
            .filter(|(&(_, j), _)| j == label)
            .map(|(_, &w)| w)
            .sum()
    }

    pub fn weighted_outdegree(&self, label: usize) -> usize {
        self.edges
            .range((label, 0)..(label + 1, 0))
            .map(|(_, &w)| w)
            .sum()
    }
}

/// Runs the unclamped fooling evaluation and builds the transition graph.
/// Original labels are the model's clean predictions, not ground truth.
pub fn build_label_graph(x: &Dataset, v: &Tensor, model: &Model) -> Result<LabelGraph> {
    if x.num_classes() != model.num_classes() {
        return Err(Error::InvalidParameter(format!(
            "dataset has {} classes but model predicts {}",
            x.num_classes(),
            model.num_classes()
        )));
    }
    let report = fooling_rate(x, v, model, false)?;
    LabelGraph::from_report(&report, x.num_classes(), x.class_names().to_vec())
}

/// Labels ranked by weighted indegree, descending, ties broken by label
/// index. Labels nothing is fooled into are omitted.
pub fn dominant_labels(g: &LabelGraph, top_k: usize) -> Vec<(usize, usize)> {
    let mut indegree = vec![0usize; g.num_labels];
    for (&(_, j), &w) in &g.edges {
        indegree[j] += w;
    }
    let mut ranked: Vec<(usize, usize)> = indegree
        .into_iter()
        .enumerate()
        .filter(|&(_, w)| w > 0)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    ranked
}

fn escape_dot(name: &str) -> String {
    name.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn dot_string(g: &LabelGraph) -> String {
    let mut out = String::from("digraph label_transitions {\n");
    for (i, name) in g.class_names.iter().enumerate() {
        out.push_str(&format!("  {i} [label=\"{}\"];\n", escape_dot(name)));
    }
    for (&(i, j), &w) in &g.edges {
        out.push_str(&format!("  {i} -> {j} [weight={w}];\n"));
    }
    out.push_str("}\n");
    out
}

pub fn edges_csv_string(g: &LabelGraph) -> String {
    let mut out = String::from("source,target,weight\n");
    for (&(i, j), &w) in &g.edges {
        out.push_str(&format!("{i},{j},{w}\n"));
    }
    out
}

pub fn export_dot(g: &LabelGraph, path: &Path) -> Result<()> {
    std::fs::write(path, dot_string(g))?;
    Ok(())
}

pub fn export_edges_csv(g: &LabelGraph, path: &Path) -> Result<()> {
    std::fs::write(path, edges_csv_string(g))?;
    Ok(())
}
