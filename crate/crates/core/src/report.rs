//! CSV and SVG report emission. Numbers use fixed precision, '.' decimals and
//! LF line endings so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::ReportRow;
use crate::pipelines::TrainingHistory;
use crate::pruning::{overlap_matrix, MaskSet};

pub fn summary_csv(task_ids: &[&str], rows: &[ReportRow]) -> Result<String> {
    let mut s = String::from("experiment,variant,sparsity,param_one,param_all");
    for id in task_ids {
        let _ = write!(s, ",{id}");
    }
    s.push('\n');
    for r in rows {
        if r.scores.len() != task_ids.len() {
            return Err(Error::Data(format!("row `{}` has {} scores", r.variant.as_str(), r.scores.len())));
        }
        let _ = write!(
            s,
            "{},{},{:.4},{:.1},{:.1}",
            r.experiment,
            r.variant.as_str(),
            r.sparsity,
            r.param_one,
            r.param_all
        );
        for v in &r.scores {
            let _ = write!(s, ",{v:.4}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn curves_csv(history: &TrainingHistory) -> Result<String> {
    let mut s = String::from("step,trained_task");
    for id in &history.task_ids {
        let _ = write!(s, ",{id}");
    }
    s.push('\n');
    let mut last = None;
    for r in &history.records {
        if last.is_some_and(|l| l >= r.step) {
            return Err(Error::Data(format!("history step {} is not increasing", r.step)));
        }
        last = Some(r.step);
        let _ = write!(s, "{},{}", r.step, r.trained_task);
        for v in &r.scores {
            let _ = write!(s, ",{v:.4}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn overlap_csv(masks: &MaskSet) -> Result<String> {
    let m = overlap_matrix(masks)?;
    let owners = masks.owners();
    let mut s = String::from("task");
    for o in &owners {
        let _ = write!(s, ",{o}");
    }
    s.push('\n');
    for (o, row) in owners.iter().zip(&m) {
        s.push_str(o);
        for v in row {
            let _ = write!(s, ",{v:.4}");
        }
        s.push('\n');
    }
    Ok(s)
}

const PALETTE: [&str; 7] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d"];

/// Line chart of every task's score over training steps.
pub fn line_chart_svg(title: &str, history: &TrainingHistory) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let max_step = history.records.last().map_or(1, |r| r.step.max(1)) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"20\">{}</text>", escape(title));
    let _ = writeln!(
        s,
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>",
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for (t, id) in history.task_ids.iter().enumerate() {
        let colour = PALETTE[t % PALETTE.len()];
        let points: Vec<String> = history
            .records
            .iter()
            .map(|r| {
                let x = pad + (w - 2.0 * pad) * r.step as f64 / max_step;
                let y = h - pad - (h - 2.0 * pad) * r.scores[t].clamp(0.0, 1.0);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{colour}\">{}</text>",
            w - pad + 4.0,
            pad + 14.0 * t as f64,
            escape(id)
        );
    }
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"{}\">0</text>", h - pad + 16.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{max_step}</text>", w - pad, h - pad + 16.0);
    s.push_str("</svg>\n");
    s
}

/// Grey-scale heatmap of a square matrix with values in [0, 1].
pub fn heatmap_svg(labels: &[&str], matrix: &[Vec<f64>]) -> String {
    let cell = 56.0;
    let margin = 64.0;
    let size = margin + cell * labels.len() as f64 + 8.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for (i, row) in matrix.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"4\" y=\"{:.1}\">{}</text>",
            margin + cell * (i as f64 + 0.6),
            escape(labels[i])
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            margin + cell * (i as f64 + 0.5),
            margin - 8.0,
            escape(labels[i])
        );
        for (j, v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let ink = if shade < 128 { "#fff" } else { "#000" };
            let (x, y) = (margin + cell * j as f64, margin + cell * i as f64);
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\"/>"
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{ink}\">{v:.2}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Everything `emit_reports` can write; absent parts are skipped.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReportInputs<'a> {
    pub task_ids: &'a [&'a str],
    pub rows: &'a [ReportRow],
    /// `(trained task, history)`; each becomes `curves_<task>.csv`.
    pub curves: &'a [(&'a str, &'a TrainingHistory)],
    pub masks: Option<&'a MaskSet>,
    pub svg: bool,
}

pub fn emit_reports(outdir: &Path, inputs: ReportInputs<'_>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(outdir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = outdir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    if !inputs.rows.is_empty() {
        put("summary.csv".into(), summary_csv(inputs.task_ids, inputs.rows)?)?;
    }
    for (task, history) in inputs.curves {
        put(format!("curves_{task}.csv"), curves_csv(history)?)?;
        if inputs.svg {
            put(format!("curves_{task}.svg"), line_chart_svg(&format!("training on {task}"), history))?;
        }
    }
    if let Some(masks) = inputs.masks {
        put("overlap.csv".into(), overlap_csv(masks)?)?;
        if inputs.svg {
            put("overlap.svg".into(), heatmap_svg(&masks.owners(), &overlap_matrix(masks)?))?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Variant;
    use crate::params::ParameterStore;
    use crate::pruning::PruningMask;
    use crate::tensor::Tensor;

    fn masks() -> MaskSet {
        let mut store = ParameterStore::<f64>::new();
        store.insert("w", Tensor::zeros(vec![4]), true).unwrap();
        let mut set = MaskSet::new();
        for (id, flags) in [("A", [true, true, false, false]), ("B", [false, true, true, false]), ("C", [true; 4])] {
            set.insert(PruningMask::from_flags(&store, id, &flags).unwrap()).unwrap();
        }
        set
    }

    fn row(variant: Variant, one: f64, all: f64) -> ReportRow {
        ReportRow {
            experiment: "x".into(),
            variant,
            sparsity: 0.36,
            param_one: one,
            param_all: all,
            scores: vec![0.9, 0.123456],
        }
    }

    #[test]
    fn summary_has_fixed_columns() {
        let csv = summary_csv(&["A", "B"], &[row(Variant::SingleTask, 64.1, 192.3)]).unwrap();
        assert_eq!(
            csv,
            "experiment,variant,sparsity,param_one,param_all,A,B\nx,single-task,0.3600,64.1,192.3,0.9000,0.1235\n"
        );
        assert!(summary_csv(&["A"], &[row(Variant::Dense, 100.0, 100.0)]).is_err());
    }

    #[test]
    fn overlap_csv_is_symmetric_with_unit_diagonal() {
        let csv = overlap_csv(&masks()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "task,A,B,C");
        assert_eq!(lines[1], "A,1.0000,0.3333,0.5000");
        assert_eq!(lines[2], "B,0.3333,1.0000,0.5000");
        assert_eq!(lines[3], "C,0.5000,0.5000,1.0000");
    }

    #[test]
    fn curves_require_increasing_steps() {
        let mut h = TrainingHistory::new(&["A", "B"]);
        h.push(0, "B", vec![0.5, 0.25]).unwrap();
        h.push(10, "B", vec![0.75, 0.125]).unwrap();
        assert_eq!(curves_csv(&h).unwrap(), "step,trained_task,A,B\n0,B,0.5000,0.2500\n10,B,0.7500,0.1250\n");
        h.records.push(h.records[0].clone());
        assert!(curves_csv(&h).is_err());
    }

    #[test]
    fn emit_writes_requested_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = TrainingHistory::new(&["A", "B"]);
        h.push(0, "A", vec![0.5, 0.25]).unwrap();
        let rows = [row(Variant::Dense, 100.0, 100.0)];
        let m = masks();
        let inputs = ReportInputs {
            task_ids: &["A", "B"],
            rows: &rows,
            curves: &[("A", &h)],
            masks: Some(&m),
            svg: true,
        };
        let files = emit_reports(dir.path(), inputs).unwrap();
        let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
        assert_eq!(names, ["summary.csv", "curves_A.csv", "curves_A.svg", "overlap.csv", "overlap.svg"]);
        let svg = std::fs::read_to_string(dir.path().join("overlap.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("0.33"));
        let blocked = dir.path().join("summary.csv").join("sub");
        assert!(matches!(emit_reports(&blocked, inputs).unwrap_err(), Error::Io(_)));
    }
}
