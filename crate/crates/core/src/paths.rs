//! Transfer-path records and their JSON and SVG renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::graph::BatchGraph;
use crate::walker::{Direction, WalkSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub direction: Direction,
    pub instance_ids: Vec<u64>,
    pub domains: Vec<Domain>,
    /// Cosine similarity of each consecutive pair of embeddings.
    pub cosines: Vec<f64>,
    pub reached: bool,
    pub epoch: usize,
    /// Per-node diagnostic value, such as the generating domain's angle.
    pub meta: Vec<Option<f64>>,
}

impl PathRecord {
    /// Describes a walk on `g`. `meta` is indexed by graph node.
    pub fn from_walk(walk: &WalkSequence, g: &BatchGraph, meta: &[Option<f64>], epoch: usize) -> Result<Self> {
        if meta.len() != g.len() {
            return Err(Error::Invalid(format!("{} meta values for {} nodes", meta.len(), g.len())));
        }
        let cosines = walk
            .nodes
            .windows(2)
            .map(|p| {
                g.cosine(p[0], p[1])
                    .ok_or_else(|| Error::Invalid("graph has no cosine similarities".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            direction: walk.direction,
            instance_ids: walk.nodes.iter().map(|&n| g.nodes()[n].instance_id).collect(),
            domains: walk.nodes.iter().map(|&n| g.domain(n)).collect(),
            cosines,
            reached: walk.reached,
            epoch,
            meta: walk.nodes.iter().map(|&n| meta[n]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExportStatus {
    Written(usize),
    /// Nothing reached its destination; an empty list was written.
    NoReachedWalks,
}

const SPACING: f64 = 72.0;
const ROW_HEIGHT: f64 = 64.0;
const MARGIN: f64 = 36.0;
const RADIUS: f64 = 15.0;

fn outline(domain: Domain) -> &'static str {
    match domain {
        Domain::Source => "#d62728",
        Domain::Auxiliary => "#7f7f7f",
        Domain::Target => "#2ca02c",
    }
}

/// Renders each record as a horizontal strip of nodes.
pub fn render_svg(records: &[PathRecord]) -> String {
    let longest = records.iter().map(PathRecord::len).max().unwrap_or(0);
    let width = 2.0 * MARGIN + longest.saturating_sub(1) as f64 * SPACING;
    let height = 2.0 * MARGIN + records.len().saturating_sub(1) as f64 * ROW_HEIGHT;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (row, rec) in records.iter().enumerate() {
        let y = MARGIN + row as f64 * ROW_HEIGHT;
        let x = |j: usize| MARGIN + j as f64 * SPACING;
        let _ = writeln!(s, r#"<g class="path" data-direction="{:?}">"#, rec.direction);
        for (j, c) in rec.cosines.iter().enumerate() {
            let _ = writeln!(
                s,
                r##"<line class="edge" x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#bbbbbb" stroke-width="2"/>"##,
                x(j) + RADIUS,
                x(j + 1) - RADIUS
            );
            let _ = writeln!(
                s,
                r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="#555555">{c:.2}</text>"##,
                (x(j) + x(j + 1)) / 2.0,
                y - 4.0
            );
        }
        for (j, domain) in rec.domains.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<circle class="node" cx="{:.1}" cy="{y:.1}" r="{RADIUS:.0}" fill="white" stroke="{}" stroke-width="3"/>"#,
                x(j),
                outline(*domain)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x(j),
                y + 4.0,
                domain.tag()
            );
            if let Some(angle) = rec.meta[j] {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{:.0}&#176;</text>"#,
                    x(j),
                    y + RADIUS + 12.0,
                    angle.to_degrees()
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the reached records as JSON and SVG.
pub fn export_paths(records: &[PathRecord], json_path: &Path, svg_path: &Path) -> Result<ExportStatus> {
    let reached: Vec<PathRecord> = records.iter().filter(|r| r.reached).cloned().collect();
    fs::write(json_path, serde_json::to_string_pretty(&reached)? + "\n")?;
    fs::write(svg_path, render_svg(&reached))?;
    Ok(if reached.is_empty() { ExportStatus::NoReachedWalks } else { ExportStatus::Written(reached.len()) })
}

pub fn read_paths(json_path: &Path) -> Result<Vec<PathRecord>> {
    Ok(serde_json::from_str(&fs::read_to_string(json_path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphNode;
    use ndarray::array;

    fn record(n: usize, reached: bool) -> PathRecord {
        let mut domains = vec![Domain::Auxiliary; n];
        domains[0] = Domain::Source;
        domains[n - 1] = if reached { Domain::Target } else { Domain::Auxiliary };
        PathRecord {
            direction: Direction::SourceToTarget,
            instance_ids: (0..n as u64).map(|i| 10 + i).collect(),
            domains,
            cosines: (0..n - 1).map(|j| 0.9 - 0.1 * j as f64).collect(),
            reached,
            epoch: 3,
            meta: (0..n).map(|j| Some(j as f64 * 0.5)).collect(),
        }
    }

    #[test]
    fn svg_structure_for_one_walk() {
        let svg = render_svg(&[record(4, true)]);
        assert_eq!(svg.matches(r#"class="node""#).count(), 4);
        assert_eq!(svg.matches(r#"class="edge""#).count(), 3);
        assert!(svg.contains("#d62728") && svg.contains("#2ca02c"));
        assert!(svg.contains("29&#176;"));
        assert_eq!(svg, render_svg(&[record(4, true)]));
    }

    #[test]
    fn export_filters_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (json, svg) = (dir.path().join("p.json"), dir.path().join("p.svg"));
        let records = vec![record(4, true), record(5, false), record(3, true)];
        assert_eq!(export_paths(&records, &json, &svg).unwrap(), ExportStatus::Written(2));
        let back = read_paths(&json).unwrap();
        assert_eq!(back, vec![records[0].clone(), records[2].clone()]);
        for r in &back {
            assert_eq!(r.domains[0], Domain::Source);
            assert_eq!(*r.domains.last().unwrap(), Domain::Target);
        }
        let text = std::fs::read_to_string(&json).unwrap();
        assert!(text.contains(r#""Source""#));
    }

    #[test]
    fn export_without_reached_walks() {
        let dir = tempfile::tempdir().unwrap();
        let (json, svg) = (dir.path().join("p.json"), dir.path().join("p.svg"));
        assert_eq!(export_paths(&[record(3, false)], &json, &svg).unwrap(), ExportStatus::NoReachedWalks);
        assert_eq!(std::fs::read_to_string(&json).unwrap().trim(), "[]");
        assert!(std::fs::read_to_string(&svg).unwrap().ends_with("</svg>\n"));
    }

    #[test]
    fn from_walk_reads_graph() {
        let nodes: Vec<GraphNode> = [Domain::Source, Domain::Auxiliary, Domain::Target, Domain::Auxiliary]
            .iter()
            .enumerate()
            .map(|(i, &domain)| GraphNode { instance_id: 100 + i as u64, domain })
            .collect();
        let emb = vec![array![1.0, 0.0], array![1.0, 1.0], array![0.0, 1.0], array![-1.0, 0.0]];
        let g = BatchGraph::build(&nodes, &emb, 1.0, 1.1).unwrap();
        let walk = WalkSequence {
            nodes: vec![0, 1, 2],
            direction: Direction::SourceToTarget,
            reached: true,
            negatives: vec![3, 3],
        };
        let meta = [Some(0.0), Some(1.0), Some(2.0), None];
        let r = PathRecord::from_walk(&walk, &g, &meta, 7).unwrap();
        assert_eq!(r.instance_ids, vec![100, 101, 102]);
        assert_eq!(r.cosines.len(), 2);
        assert!((r.cosines[0] - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.meta, vec![Some(0.0), Some(1.0), Some(2.0)]);
        assert!(PathRecord::from_walk(&walk, &g, &meta[..2], 7).is_err());
    }
}
