//! CAS and attention traces for one video, as CSV and SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::data::{resample_to_t, Dataset, ResampleMode};
use crate::error::{Error, Result};
use crate::localization::{classify_video, instance_probs};
use crate::network::{Network, INS};
use crate::scalar::Scalar;
use crate::types::HyperParams;

/// Named columns of length `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Traces {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.names.join(",");
        out.push('\n');
        let rows = self.columns.first().map_or(0, Vec::len);
        for t in 0..rows {
            let row: Vec<String> = self.columns.iter().map(|c| c[t].to_string()).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// `phi_<class>` and `cas_ins_<class>` for each ground-truth class (predicted classes
/// when the video is unlabeled), plus `att_ins`.
pub fn compute_traces<S: Scalar>(
    network: &Network<S>,
    hp: &HyperParams,
    dataset: &Dataset,
    video_id: &str,
    mode: ResampleMode,
) -> Result<Traces> {
    super::pipeline::check_compatible(network, dataset)?;
    let (seq, record) = dataset
        .find(video_id)
        .ok_or_else(|| Error::Validation(format!("unknown video id `{video_id}`")))?;
    let x = resample_to_t(seq.features.mapv(|v| S::from_f64_lossy(f64::from(v))).view(), hp.snippets, mode);
    let acts = network.forward_eval(x.view())?;
    let classes = if record.label.is_empty() {
        classify_video(instance_probs(&acts, hp.r_ins)?.view(), hp.class_threshold)
    } else {
        record.label.class_ids.clone()
    };
    let col = |a: &ndarray::Array2<S>, c: usize| a.column(c).iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>();
    let mut traces = Traces { names: Vec::new(), columns: Vec::new() };
    for &c in &classes {
        let name = &dataset.classes[c];
        traces.names.push(format!("phi_{name}"));
        traces.columns.push(col(&acts.cas, c));
    }
    traces.names.push("att_ins".into());
    traces.columns.push(col(&acts.attention, INS));
    for &c in &classes {
        let name = &dataset.classes[c];
        traces.names.push(format!("cas_ins_{name}"));
        traces.columns.push(col(&acts.cas_ins, c));
    }
    Ok(traces)
}

fn render_svg(traces: &Traces, title: &str, path: &Path) -> Result<()> {
    let draw_err = |e: String| Error::Validation(format!("plot {}: {e}", path.display()));
    let rows = traces.columns.first().map_or(0, Vec::len).max(2);
    let (lo, hi) = traces
        .columns
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let pad = 0.05 * (hi - lo);

    let root = SVGBackend::new(path, (960, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..(rows - 1) as f64, (lo - pad)..(hi + pad))
        .map_err(|e| draw_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("snippet")
        .draw()
        .map_err(|e| draw_err(e.to_string()))?;
    for (i, (name, column)) in traces.names.iter().zip(&traces.columns).enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(column.iter().enumerate().map(|(t, &v)| (t as f64, v)), color.stroke_width(2)))
            .map_err(|e| draw_err(e.to_string()))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| draw_err(e.to_string()))?;
    root.present().map_err(|e| draw_err(e.to_string()))
}

/// Writes `<out>.csv` and `<out>.svg`; returns both paths.
pub fn plot_traces<S: Scalar>(
    network: &Network<S>,
    hp: &HyperParams,
    dataset: &Dataset,
    video_id: &str,
    mode: ResampleMode,
    out: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let traces = compute_traces(network, hp, dataset, video_id, mode)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let csv = out.with_extension("csv");
    let svg = out.with_extension("svg");
    std::fs::write(&csv, traces.to_csv()).map_err(|e| Error::io(&csv, e))?;
    render_svg(&traces, video_id, &svg)?;
    Ok((csv, svg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::network::Architecture;

    #[test]
    fn zero_network_traces() {
        let spec = SyntheticSpec { num_videos: 2, num_test_videos: 0, feature_dim: 8, num_classes: 3, ..Default::default() };
        let data = generate_synthetic(&spec).unwrap();
        let net = Network::<f32>::zeros(Architecture::new(16, 3));
        let mut hp = HyperParams::thumos(3);
        hp.snippets = 30;
        let dir = tempfile::tempdir().unwrap();
        let (csv, svg) = plot_traces(&net, &hp, &data, "video_0000", ResampleMode::Linear, &dir.path().join("trace")).unwrap();

        let text = std::fs::read_to_string(csv).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let gt = data.videos[0].1.label.class_ids.len();
        assert_eq!(header.len(), 2 * gt + 1);
        let att = header.iter().position(|h| *h == "att_ins").unwrap();
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 30);
        for r in rows {
            let v: f64 = r.split(',').nth(att).unwrap().parse().unwrap();
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
        assert!(std::fs::read_to_string(svg).unwrap().contains("<svg"));
        assert!(compute_traces(&net, &hp, &data, "nope", ResampleMode::Linear).is_err());
    }
}
