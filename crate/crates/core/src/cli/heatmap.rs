//! Deterministic SVG heatmaps for similarity matrices: side-by-side panels
//! share one card order and one absolute color scale over [0, 100], so
//! shading is comparable across panels and across runs.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{CardId, Clustering, StudyConfig};
use crate::simmatrix::SimilarityMatrix;

const CELL: usize = 22;
const GUTTER_LEFT: usize = 150;
const TITLE_H: usize = 26;
const PAD: usize = 12;
const PANEL_GAP: usize = 28;

/// Light → dark endpoints of the monotone scale (0 → 100).
const LIGHT: (u8, u8, u8) = (247, 251, 255);
const DARK: (u8, u8, u8) = (8, 48, 107);

#[derive(Debug, Error, PartialEq)]
pub enum HeatmapError {
    #[error("card order is not a permutation of the matrix axis")]
    NotAPermutation,
    #[error("matrix `{0}` covers a different card set than the requested order")]
    AxisMismatch(String),
}

/// One panel: a titled matrix.
#[derive(Debug)]
pub struct Heatmap<'a> {
    pub title: &'a str,
    pub matrix: &'a SimilarityMatrix,
}

/// Card order that groups a clustering's categories contiguously, so
/// related cards sit next to each other and blocks appear on the diagonal.
pub fn clustering_order(clustering: &Clustering) -> Vec<CardId> {
    clustering.cards()
}

fn color(value: f64) -> String {
    let t = (value / 100.0).clamp(0.0, 1.0);
    let channel = |a: u8, b: u8| (f64::from(a) + (f64::from(b) - f64::from(a)) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        channel(LIGHT.0, DARK.0),
        channel(LIGHT.1, DARK.1),
        channel(LIGHT.2, DARK.2)
    )
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the panels into one SVG document. The output is a pure function
/// of the inputs (integer geometry, no timestamps), so repeated calls are
/// byte-identical.
pub fn render(
    panels: &[Heatmap],
    order: &[CardId],
    config: &StudyConfig,
) -> Result<String, HeatmapError> {
    let mut sorted = order.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut axis = config.card_ids();
    axis.sort();
    if sorted != axis || order.len() != axis.len() {
        return Err(HeatmapError::NotAPermutation);
    }
    for panel in panels {
        let mut cards = panel.matrix.cards.clone();
        cards.sort();
        if cards != axis {
            return Err(HeatmapError::AxisMismatch(panel.title.to_string()));
        }
    }

    let n = order.len();
    let panel_w = GUTTER_LEFT + n * CELL + PAD;
    let width = PAD + panels.len() * panel_w + panels.len().saturating_sub(1) * PANEL_GAP + PAD;
    let height = TITLE_H + n * CELL + 2 * PAD;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(
        "<style>text { font-family: monospace; fill: #222222; } .title { font-size: 13px; } \
         .label { font-size: 11px; }</style>\n",
    );
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));

    for (p, panel) in panels.iter().enumerate() {
        let x0 = PAD + p * (panel_w + PANEL_GAP);
        let grid_x = x0 + GUTTER_LEFT;
        let grid_y = TITLE_H + PAD;
        let position: HashMap<CardId, usize> =
            panel.matrix.cards.iter().enumerate().map(|(i, &c)| (c, i)).collect();

        svg.push_str(&format!(
            "<text class=\"title\" x=\"{grid_x}\" y=\"{}\">{}</text>\n",
            PAD + 12,
            escape_xml(panel.title)
        ));
        for (row, &card) in order.iter().enumerate() {
            svg.push_str(&format!(
                "<text class=\"label\" x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
                grid_x - 6,
                grid_y + row * CELL + CELL / 2 + 4,
                escape_xml(config.label(card))
            ));
            let i = position[&card];
            for (col, &other) in order.iter().enumerate() {
                let j = position[&other];
                let value = panel.matrix.values[i][j].to_f64();
                svg.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\"/>\n",
                    grid_x + col * CELL,
                    grid_y + row * CELL,
                    color(value)
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParticipantSort, Provenance, SortRow, StudyResults};
    use crate::simmatrix::build_similarity;

    fn config(labels: &[&str]) -> StudyConfig {
        StudyConfig::new(
            "heat".to_string(),
            labels.iter().map(|s| s.to_string()).collect(),
            4,
            None,
            None,
            None,
            None,
        )
        .unwrap()
    }

    fn planted() -> (StudyConfig, SimilarityMatrix, Clustering) {
        let cfg = config(&["a1", "a2", "b1 & co", "b2"]);
        let sorts = (0..4)
            .map(|p| ParticipantSort {
                respondent_id: format!("r{p}"),
                rows: vec![
                    SortRow { category: "g0".into(), card: CardId(0) },
                    SortRow { category: "g0".into(), card: CardId(1) },
                    SortRow { category: "g1".into(), card: CardId(2) },
                    SortRow { category: "g1".into(), card: CardId(3) },
                ],
                complete: true,
            })
            .collect();
        let results =
            StudyResults { config: cfg.clone(), sorts, provenance: Provenance::Real };
        let sim = build_similarity(&results).unwrap();
        let clustering = Clustering::from_parts(vec![
            ("g0".into(), vec![CardId(0), CardId(1)]),
            ("g1".into(), vec![CardId(2), CardId(3)]),
        ]);
        (cfg, sim, clustering)
    }

    #[test]
    fn color_scale_is_monotone_light_to_dark() {
        assert_eq!(color(0.0), "#f7fbff");
        assert_eq!(color(100.0), "#08306b");
        let brightness = |hex: &str| {
            u32::from_str_radix(&hex[1..3], 16).unwrap()
                + u32::from_str_radix(&hex[3..5], 16).unwrap()
                + u32::from_str_radix(&hex[5..7], 16).unwrap()
        };
        let mut last = brightness(&color(0.0));
        for v in 1..=100 {
            let b = brightness(&color(f64::from(v)));
            assert!(b <= last, "brightness must not increase at {v}");
            last = b;
        }
    }

    #[test]
    fn render_is_byte_identical_and_blocks_are_dark() {
        let (cfg, sim, clustering) = planted();
        let order = clustering_order(&clustering);
        let panels = [Heatmap { title: "real", matrix: &sim }];
        let first = render(&panels, &order, &cfg).unwrap();
        let second = render(&panels, &order, &cfg).unwrap();
        assert_eq!(first, second);
        // 4 within-group cells at 100% (two 2×2 blocks minus nothing: the
        // diagonal is 0 by construction, so 2 dark cells per block).
        assert_eq!(first.matches("#08306b").count(), 4);
        assert_eq!(first.matches("#f7fbff").count(), 12);
        assert!(first.contains("b1 &amp; co"));
        assert!(!first.to_lowercase().contains("timestamp"));
    }

    #[test]
    fn order_must_be_a_permutation() {
        let (cfg, sim, _) = planted();
        let panels = [Heatmap { title: "real", matrix: &sim }];
        let missing = vec![CardId(0), CardId(1), CardId(2)];
        assert_eq!(render(&panels, &missing, &cfg).unwrap_err(), HeatmapError::NotAPermutation);
        let duplicated = vec![CardId(0), CardId(1), CardId(2), CardId(2)];
        assert_eq!(render(&panels, &duplicated, &cfg).unwrap_err(), HeatmapError::NotAPermutation);
    }

    #[test]
    fn shared_scale_spans_panels() {
        let (cfg, sim, clustering) = planted();
        let order = clustering_order(&clustering);
        let panels =
            [Heatmap { title: "real", matrix: &sim }, Heatmap { title: "copy", matrix: &sim }];
        let svg = render(&panels, &order, &cfg).unwrap();
        assert_eq!(svg.matches("#08306b").count(), 8);
        assert!(svg.contains(">real<") && svg.contains(">copy<"));
    }
}
