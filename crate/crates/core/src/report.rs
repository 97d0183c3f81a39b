//! Figure and manifest emission: grouped accuracy bar charts as
//! self-contained SVG, the summary text table, and the run manifest that
//! names every file a run produced.
//!
//! All output is a pure function of the matrix contents, so rerunning a
//! report over the same CSV yields byte-identical files.

use crate::error::{Error, Result};
use crate::transfer::{CellOutcome, ExperimentPlan, MatrixCell, MatrixSummary, TransferMatrix};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const CHART_MARGIN_LEFT: f64 = 46.0;
const CHART_MARGIN_RIGHT: f64 = 16.0;
const CHART_MARGIN_TOP: f64 = 34.0;
const CHART_MARGIN_BOTTOM: f64 = 88.0;
const PLOT_HEIGHT: f64 = 240.0;
const BAR_WIDTH: f64 = 16.0;
const BAR_GAP: f64 = 2.0;
const GROUP_GAP: f64 = 30.0;
const LEGEND_WIDTH: f64 = 170.0;
const LEGEND_ROW: f64 = 16.0;

/// One fill color per source model, cycled when sources exceed the palette.
const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn coord(v: f64) -> String {
    format!("{v:.4}")
}

/// Accuracy to a y coordinate; the bar for accuracy `a` spans
/// [y_of(a), y_of(0)], so bar geometry is an exact function of the value.
fn y_of(acc: f64) -> f64 {
    CHART_MARGIN_TOP + PLOT_HEIGHT * (1.0 - acc)
}

/// Grouped bar chart for one (variant, attack config) slice: one group per
/// target, one bar per source, the target's clean accuracy drawn as a
/// dashed reference line across its group. A data table rides along in a
/// leading XML comment.
pub fn render_chart(matrix: &TransferMatrix, variant: &str, config: &str) -> Result<String> {
    let cells: Vec<&MatrixCell> = matrix
        .cells
        .iter()
        .filter(|c| c.variant == variant && c.config_label() == config)
        .collect();
    if cells.is_empty() {
        return Err(Error::Data(format!(
            "no cells for variant `{variant}` and config `{config}`"
        )));
    }
    let axes = matrix.axes();
    let sources = &axes.sources;
    let targets = &axes.targets;
    let cell_of = |source: &str, target: &str| {
        cells
            .iter()
            .find(|c| c.source == source && c.target == target)
            .copied()
    };

    let group_inner = sources.len() as f64 * (BAR_WIDTH + BAR_GAP) - BAR_GAP;
    let group_stride = group_inner + GROUP_GAP;
    let plot_w = targets.len() as f64 * group_stride - GROUP_GAP;
    let legend_h = CHART_MARGIN_TOP + sources.len() as f64 * LEGEND_ROW;
    let width = CHART_MARGIN_LEFT + plot_w + CHART_MARGIN_RIGHT + LEGEND_WIDTH;
    let height = (CHART_MARGIN_TOP + PLOT_HEIGHT + CHART_MARGIN_BOTTOM).max(legend_h + 8.0);
    let base_y = y_of(0.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" font-family=\"Helvetica, Arial, sans-serif\">",
        coord(width),
        coord(height)
    );

    // Embedded data table; hyphens in names are single, so the comment
    // never contains a forbidden double hyphen.
    let _ = writeln!(svg, "<!--\ndata: source,target,clean_acc,adv_acc");
    for target in targets {
        for source in sources {
            if let Some(cell) = cell_of(source, target) {
                match &cell.outcome {
                    CellOutcome::Evaluated { clean_acc, adv_acc, .. } => {
                        let _ = writeln!(svg, "{source},{target},{clean_acc:.6},{adv_acc:.6}");
                    }
                    CellOutcome::Skipped { .. } => {
                        let _ = writeln!(svg, "{source},{target},n/a,n/a");
                    }
                }
            }
        }
    }
    let _ = writeln!(svg, "-->");

    let _ = writeln!(
        svg,
        "<title>{} / {}: accuracy under attack</title>",
        esc(variant),
        esc(config)
    );
    let _ = writeln!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>",
        coord(width),
        coord(height)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"18\" font-size=\"12\" fill=\"#222222\">{} / {}</text>",
        coord(CHART_MARGIN_LEFT),
        esc(variant),
        esc(config)
    );

    // Y axis: gridlines and labels every 0.25.
    for i in 0..=4 {
        let acc = i as f64 * 0.25;
        let y = y_of(acc);
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
            coord(CHART_MARGIN_LEFT),
            coord(y),
            coord(CHART_MARGIN_LEFT + plot_w),
            coord(y)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"9\" fill=\"#555555\" text-anchor=\"end\">{:.2}</text>",
            coord(CHART_MARGIN_LEFT - 6.0),
            coord(y + 3.0),
            acc
        );
    }

    for (ti, target) in targets.iter().enumerate() {
        let group_x = CHART_MARGIN_LEFT + ti as f64 * group_stride;
        let _ = writeln!(svg, "<g class=\"group\" data-target=\"{}\">", esc(target));
        let mut clean_line: Option<f64> = None;
        for (si, source) in sources.iter().enumerate() {
            let Some(cell) = cell_of(source, target) else { continue };
            let x = group_x + si as f64 * (BAR_WIDTH + BAR_GAP);
            match &cell.outcome {
                CellOutcome::Evaluated { clean_acc, adv_acc, .. } => {
                    clean_line = Some(*clean_acc);
                    let y = y_of(*adv_acc);
                    let _ = writeln!(
                        svg,
                        "<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"><title>{} on {}: {:.6}</title></rect>",
                        coord(x),
                        coord(y),
                        coord(BAR_WIDTH),
                        coord(base_y - y),
                        PALETTE[si % PALETTE.len()],
                        esc(source),
                        esc(target),
                        adv_acc
                    );
                }
                CellOutcome::Skipped { .. } => {
                    let _ = writeln!(
                        svg,
                        "<text class=\"na\" x=\"{}\" y=\"{}\" font-size=\"9\" fill=\"#999999\">n/a</text>",
                        coord(x),
                        coord(base_y - 4.0)
                    );
                }
            }
        }
        if let Some(clean) = clean_line {
            let y = y_of(clean);
            let _ = writeln!(
                svg,
                "<line class=\"baseline\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1.5\" stroke-dasharray=\"5 3\"><title>clean accuracy {:.6}</title></line>",
                coord(group_x - 2.0),
                coord(y),
                coord(group_x + group_inner + 2.0),
                coord(y),
                clean
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"9\" fill=\"#222222\" text-anchor=\"end\" transform=\"rotate(-35 {} {})\">{}</text>",
            coord(group_x + group_inner / 2.0),
            coord(base_y + 14.0),
            coord(group_x + group_inner / 2.0),
            coord(base_y + 14.0),
            esc(target)
        );
        let _ = writeln!(svg, "</g>");
    }

    // Axis frame.
    let _ = writeln!(
        svg,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
        coord(CHART_MARGIN_LEFT),
        coord(CHART_MARGIN_TOP),
        coord(CHART_MARGIN_LEFT),
        coord(base_y)
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
        coord(CHART_MARGIN_LEFT),
        coord(base_y),
        coord(CHART_MARGIN_LEFT + plot_w),
        coord(base_y)
    );

    // Legend: one swatch per source, plus the baseline key.
    let legend_x = CHART_MARGIN_LEFT + plot_w + CHART_MARGIN_RIGHT;
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#222222\">source model</text>",
        coord(legend_x),
        coord(CHART_MARGIN_TOP - 6.0)
    );
    for (si, source) in sources.iter().enumerate() {
        let y = CHART_MARGIN_TOP + si as f64 * LEGEND_ROW;
        let _ = writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>",
            coord(legend_x),
            coord(y),
            PALETTE[si % PALETTE.len()]
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"9\" fill=\"#222222\">{}</text>",
            coord(legend_x + 14.0),
            coord(y + 8.5),
            esc(source)
        );
    }
    let ly = CHART_MARGIN_TOP + sources.len() as f64 * LEGEND_ROW + 6.0;
    let _ = writeln!(
        svg,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1.5\" stroke-dasharray=\"5 3\"/>",
        coord(legend_x),
        coord(ly),
        coord(legend_x + 10.0),
        coord(ly)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"9\" fill=\"#222222\">clean accuracy</text>",
        coord(legend_x + 14.0),
        coord(ly + 3.0)
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// File-name stem for one chart, unique per (variant, config).
pub fn chart_stem(variant: &str, config: &str) -> String {
    format!("chart_{variant}_{config}")
}

/// Render every (variant, config) slice of the matrix.
pub fn matrix_charts(matrix: &TransferMatrix) -> Result<Vec<(String, String)>> {
    if matrix.cells.is_empty() {
        return Err(Error::Data("matrix has no cells; nothing to chart".into()));
    }
    let axes = matrix.axes();
    let mut charts = Vec::new();
    for variant in &axes.variants {
        for config in &axes.configs {
            if !matrix
                .cells
                .iter()
                .any(|c| &c.variant == variant && &c.config_label() == config)
            {
                continue;
            }
            charts.push((
                chart_stem(variant, config),
                render_chart(matrix, variant, config)?,
            ));
        }
    }
    Ok(charts)
}

fn push_row(out: &mut String, cols: &[String], widths: &[usize]) {
    let mut line = String::new();
    for (i, col) in cols.iter().enumerate() {
        if i > 0 {
            line.push_str("  ");
        }
        let _ = write!(line, "{:<width$}", col, width = widths[i]);
    }
    out.push_str(line.trim_end());
    out.push('\n');
}

fn opt4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

/// Aligned text rendering of a summary: per-target table, family-pair
/// table, then the trend observations.
pub fn summary_text(summary: &MatrixSummary) -> String {
    let header: Vec<String> = [
        "variant", "config", "target", "clean", "white_box", "white_drop", "black_mean",
        "black_min", "black_drop",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows: Vec<Vec<String>> = vec![header];
    for t in &summary.targets {
        rows.push(vec![
            t.variant.clone(),
            t.config.clone(),
            t.target.clone(),
            format!("{:.4}", t.clean_acc),
            format!("{:.4}", t.white_box_acc),
            format!("{:.4}", t.white_box_drop),
            opt4(t.black_box_mean),
            opt4(t.black_box_min),
            opt4(t.black_box_drop_mean),
        ]);
    }
    let cols = rows[0].len();
    let mut widths = vec![0usize; cols];
    for row in &rows {
        for (i, col) in row.iter().enumerate() {
            widths[i] = widths[i].max(col.len());
        }
    }
    let mut out = String::from("per-target accuracy under attack\n\n");
    for row in &rows {
        push_row(&mut out, row, &widths);
    }

    out.push_str("\nmean transfer drop by super-family pair (off-diagonal cells)\n\n");
    let header: Vec<String> = ["source_family", "target_family", "mean_drop", "cells"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows: Vec<Vec<String>> = vec![header];
    for p in &summary.family_pairs {
        rows.push(vec![
            p.source_family.clone(),
            p.target_family.clone(),
            format!("{:.4}", p.mean_drop),
            p.cells.to_string(),
        ]);
    }
    let cols = rows[0].len();
    let mut widths = vec![0usize; cols];
    for row in &rows {
        for (i, col) in row.iter().enumerate() {
            widths[i] = widths[i].max(col.len());
        }
    }
    for row in &rows {
        push_row(&mut out, row, &widths);
    }

    out.push_str("\ntrend observations (informational)\n\n");
    for line in &summary.trend_lines {
        out.push_str("- ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

pub const MANIFEST_FORMAT: &str = "run-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Record of one run: what produced it and every file it emitted. Contains
/// no volatile fields, so reruns serialize identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub code_version: String,
    /// Present for matrix runs; absent for report-only invocations.
    pub plan: Option<ExperimentPlan>,
    pub seed: Option<u64>,
    pub corpus_hash: Option<String>,
    /// Paths relative to the manifest's directory, sorted.
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(plan: Option<ExperimentPlan>, corpus_hash: Option<String>) -> RunManifest {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed: plan.as_ref().map(|p| p.seed),
            plan,
            corpus_hash,
            files: Vec::new(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut sorted = self.clone();
        sorted.files.sort();
        let json = serde_json::to_string_pretty(&sorted)
            .map_err(|e| Error::Data(format!("manifest encoding failed: {e}")))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<RunManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: format!("not a valid manifest: {e}"),
        })?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("unexpected format `{}`", manifest.format),
            });
        }
        Ok(manifest)
    }
}

pub const REPORT_MANIFEST_FILE: &str = "report-manifest.json";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Emit charts, the summary text, and a manifest naming all of them into
/// `out_dir`. The matrix must summarize cleanly first; nothing is written
/// on error.
pub fn write_report(matrix: &TransferMatrix, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let summary = crate::transfer::summarize(matrix)?;
    let charts = matrix_charts(matrix)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut manifest = RunManifest::new(None, None);
    for (stem, svg) in &charts {
        let name = format!("{stem}.svg");
        let path = out_dir.join(&name);
        std::fs::write(&path, svg)?;
        manifest.files.push(name);
        written.push(path);
    }
    let summary_path = out_dir.join(SUMMARY_FILE);
    std::fs::write(&summary_path, summary_text(&summary))?;
    manifest.files.push(SUMMARY_FILE.into());
    written.push(summary_path);
    manifest.files.push(REPORT_MANIFEST_FILE.into());
    let manifest_path = out_dir.join(REPORT_MANIFEST_FILE);
    manifest.write(&manifest_path)?;
    written.push(manifest_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackKind;
    use crate::transfer::{summarize, CleanBaseline, MatrixCell};

    fn cell(source: &str, target: &str, clean: f64, adv: f64) -> MatrixCell {
        MatrixCell {
            variant: "full-aug".into(),
            source: source.into(),
            target: target.into(),
            attack: AttackKind::Fgsm,
            epsilon: 0.03,
            alpha: None,
            iterations: None,
            seed: 1,
            outcome: CellOutcome::Evaluated { clean_acc: clean, adv_acc: adv, drop: clean - adv },
        }
    }

    fn sample_matrix() -> TransferMatrix {
        TransferMatrix {
            cells: vec![
                cell("brainnet", "brainnet", 0.9, 0.5),
                cell("brainnet", "brainnext_small", 0.8, 0.7),
                cell("brainnext_small", "brainnet", 0.9, 0.6),
                cell("brainnext_small", "brainnext_small", 0.8, 0.4),
            ],
            baselines: vec![
                CleanBaseline { variant: "full-aug".into(), model: "brainnet".into(), clean_acc: 0.9 },
                CleanBaseline {
                    variant: "full-aug".into(),
                    model: "brainnext_small".into(),
                    clean_acc: 0.8,
                },
            ],
        }
    }

    fn wide_matrix(sources: usize, targets: usize) -> TransferMatrix {
        let mut m = TransferMatrix::default();
        for t in 0..targets {
            for s in 0..sources {
                m.cells.push(cell(
                    &format!("src{s}"),
                    &format!("tgt{t}"),
                    0.9,
                    0.1 + 0.05 * s as f64,
                ));
            }
        }
        m
    }

    #[test]
    fn chart_is_well_formed_xml() {
        let svg = render_chart(&sample_matrix(), "full-aug", "fgsm_eps0.03").unwrap();
        roxmltree::Document::parse(&svg).unwrap();
    }

    #[test]
    fn chart_has_one_group_per_target_and_one_bar_per_source() {
        let m = wide_matrix(8, 3);
        let svg = render_chart(&m, "full-aug", "fgsm_eps0.03").unwrap();
        assert_eq!(svg.matches("<g class=\"group\"").count(), 3);
        assert_eq!(svg.matches("<rect class=\"bar\"").count(), 24);
        assert_eq!(svg.matches("class=\"baseline\"").count(), 3);
        roxmltree::Document::parse(&svg).unwrap();
    }

    #[test]
    fn bar_geometry_is_computed_from_the_accuracy() {
        let svg = render_chart(&sample_matrix(), "full-aug", "fgsm_eps0.03").unwrap();
        // brainnet on brainnet scored 0.5: top at y_of(0.5), height half the plot.
        let expected = format!(
            "y=\"{}\" width=\"{}\" height=\"{}\"",
            coord(y_of(0.5)),
            coord(BAR_WIDTH),
            coord(y_of(0.0) - y_of(0.5))
        );
        assert!(svg.contains(&expected), "missing `{expected}` in\n{svg}");
    }

    #[test]
    fn chart_embeds_the_data_table() {
        let svg = render_chart(&sample_matrix(), "full-aug", "fgsm_eps0.03").unwrap();
        assert!(svg.contains("data: source,target,clean_acc,adv_acc"));
        assert!(svg.contains("brainnet,brainnet,0.900000,0.500000"));
        assert!(svg.contains("brainnext_small,brainnext_small,0.800000,0.400000"));
    }

    #[test]
    fn skipped_cells_render_markers_not_bars() {
        let mut m = sample_matrix();
        m.cells[1].outcome = CellOutcome::Skipped { reason: "resolution".into() };
        let svg = render_chart(&m, "full-aug", "fgsm_eps0.03").unwrap();
        assert_eq!(svg.matches("<rect class=\"bar\"").count(), 3);
        assert_eq!(svg.matches("class=\"na\"").count(), 1);
        assert!(svg.contains("brainnet,brainnext_small,n/a,n/a"));
        roxmltree::Document::parse(&svg).unwrap();
    }

    #[test]
    fn charts_cover_every_variant_config_slice() {
        let mut m = sample_matrix();
        let mut pgd = sample_matrix().cells;
        for c in &mut pgd {
            c.attack = AttackKind::Pgd;
            c.alpha = Some(0.0075);
            c.iterations = Some(20);
        }
        m.cells.extend(pgd);
        let charts = matrix_charts(&m).unwrap();
        let stems: Vec<&str> = charts.iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(
            stems,
            vec![
                "chart_full-aug_fgsm_eps0.03",
                "chart_full-aug_pgd_eps0.03_alpha0.0075_it20"
            ]
        );
    }

    #[test]
    fn empty_matrix_is_an_error_and_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report");
        assert!(write_report(&TransferMatrix::default(), &out).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn summary_text_lists_targets_families_and_trends() {
        let summary = summarize(&sample_matrix()).unwrap();
        let text = summary_text(&summary);
        assert!(text.contains("per-target accuracy under attack"));
        assert!(text.contains("brainnext_small"));
        assert!(text.contains("resnet_like"));
        assert!(text.contains("trend observations"));
        assert!(text.contains("0.9000"));
    }

    #[test]
    fn report_writes_charts_summary_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report");
        let written = write_report(&sample_matrix(), &out).unwrap();
        assert_eq!(written.len(), 3);
        let manifest = RunManifest::read(out.join(REPORT_MANIFEST_FILE)).unwrap();
        let mut listed = manifest.files.clone();
        listed.sort();
        let mut on_disk: Vec<String> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        on_disk.sort();
        assert_eq!(listed, on_disk, "manifest must reference exactly the emitted files");
    }

    #[test]
    fn report_reruns_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report");
        let first = write_report(&sample_matrix(), &out).unwrap();
        let snapshot: Vec<Vec<u8>> =
            first.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let second = write_report(&sample_matrix(), &out).unwrap();
        assert_eq!(first, second);
        for (path, before) in second.iter().zip(snapshot) {
            assert_eq!(std::fs::read(path).unwrap(), before, "{}", path.display());
        }
    }

    #[test]
    fn manifest_round_trips_and_rejects_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut manifest = RunManifest::new(Some(ExperimentPlan::default_grid(5)), Some("abc".into()));
        manifest.files = vec!["b.svg".into(), "a.csv".into()];
        manifest.write(&path).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back.files, vec!["a.csv".to_string(), "b.svg".to_string()]);
        assert_eq!(back.seed, Some(5));
        assert_eq!(back.corpus_hash.as_deref(), Some("abc"));

        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"format\"", "\"bogus_key\": 1, \"format\"");
        std::fs::write(&path, text).unwrap();
        assert!(RunManifest::read(&path).is_err());
    }
}
