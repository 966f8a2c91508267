//! Text artifacts: dataset, bound-report and training-trace CSVs, and the
//! four-bar SVG chart. Floats are written in shortest round-trip form, so
//! every file parses back to identical values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::BoundReport;
use crate::data::{Dataset, FeatureVector, Label, Origin, Sample};
use crate::error::{format_err, invalid, Error, Result};
use crate::train::TraceRow;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => format_err(format!("{other:?}")),
    }
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| format_err(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| format_err(e.to_string()))
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field.parse().map_err(|_| format_err(format!("line {line}: cannot parse {what} from {field:?}")))
}

/// Header `f0,...,f{p-1},y[,group][,aux]`; the optional columns appear when
/// every sample carries the field.
pub fn dataset_to_csv(d: &Dataset) -> Result<String> {
    let groups = d.all_have_groups() && !d.is_empty();
    let aux = d.all_have_aux() && !d.is_empty();
    if !groups && d.iter().any(|s| s.group.is_some()) {
        return Err(invalid("some but not all samples carry a group"));
    }
    if !aux && d.iter().any(|s| s.aux.is_some()) {
        return Err(invalid("some but not all samples carry an annotation"));
    }
    let mut w = writer();
    let mut header: Vec<String> = (0..d.dim()).map(|i| format!("f{i}")).collect();
    header.push("y".into());
    if groups {
        header.push("group".into());
    }
    if aux {
        header.push("aux".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for s in d.iter() {
        let mut row: Vec<String> = s.x.as_slice().iter().map(|v| v.to_string()).collect();
        row.push(s.y.value().to_string());
        if let (true, Some(g)) = (groups, s.group) {
            row.push(g.to_string());
        }
        if let (true, Some(a)) = (aux, s.aux) {
            row.push(a.value().to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

pub fn dataset_from_csv(text: &str, origin: Origin) -> Result<Dataset> {
    let mut r = reader(text);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let p = header.iter().take_while(|h| h.starts_with('f')).count();
    for (i, h) in header[..p].iter().enumerate() {
        if *h != format!("f{i}") {
            return Err(format_err(format!("expected column f{i}, found {h:?}")));
        }
    }
    let rest: Vec<&str> = header[p..].iter().map(String::as_str).collect();
    let (groups, aux) = match rest.as_slice() {
        ["y"] => (false, false),
        ["y", "group"] => (true, false),
        ["y", "aux"] => (false, true),
        ["y", "group", "aux"] => (true, true),
        _ => return Err(format_err(format!("unexpected trailing columns {rest:?}"))),
    };
    if p == 0 {
        return Err(format_err("no feature columns"));
    }
    let mut samples = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = k + 2;
        if rec.len() != header.len() {
            return Err(format_err(format!("line {line}: {} fields, expected {}", rec.len(), header.len())));
        }
        let x = (0..p).map(|i| parse::<f64>(&rec[i], "feature", line)).collect::<Result<Vec<_>>>()?;
        let y = Label::new(parse(&rec[p], "label", line)?)?;
        let mut s = Sample::new(FeatureVector::new(x), y);
        let mut col = p + 1;
        if groups {
            s = s.with_group(parse(&rec[col], "group", line)?);
            col += 1;
        }
        if aux {
            s = s.with_aux(Label::new(parse(&rec[col], "aux", line)?)?);
        }
        samples.push(s);
    }
    Dataset::with_dim(p, samples, origin)
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_csv(d)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path, origin: Origin) -> Result<Dataset> {
    dataset_from_csv(&std::fs::read_to_string(path)?, origin)
}

/// One row of the bound-report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub method: String,
    pub seed: u64,
    pub train_err: f64,
    pub test_err: f64,
    pub c: f64,
    pub q: f64,
    pub d_theta: f64,
    pub phi: f64,
    pub bound_c: f64,
    pub bound_d: f64,
}

impl BoundRow {
    pub fn new(method: &str, seed: u64, r: &BoundReport) -> Self {
        BoundRow {
            method: method.to_string(),
            seed,
            train_err: r.train_err,
            test_err: r.test_err,
            c: r.c,
            q: r.q,
            d_theta: r.d_theta,
            phi: r.phi,
            bound_c: r.bound_c,
            bound_d: r.bound_d,
        }
    }
}

pub const BOUND_HEADER: [&str; 10] = ["method", "seed", "train_err", "test_err", "c", "q", "d_theta", "phi", "bound_c", "bound_d"];

/// Rows are written sorted by `(method, seed)`.
pub fn bounds_to_csv(rows: &[BoundRow]) -> Result<String> {
    let mut sorted: Vec<&BoundRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.method, a.seed).cmp(&(&b.method, b.seed)));
    let mut w = writer();
    w.write_record(BOUND_HEADER).map_err(csv_err)?;
    for r in sorted {
        if r.method.contains(['\n', '\r']) {
            return Err(invalid("method names cannot contain line breaks"));
        }
        let nums = [r.train_err, r.test_err, r.c, r.q, r.d_theta, r.phi, r.bound_c, r.bound_d];
        let mut rec = vec![r.method.clone(), r.seed.to_string()];
        rec.extend(nums.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

pub fn bounds_from_csv(text: &str) -> Result<Vec<BoundRow>> {
    let mut r = reader(text);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != BOUND_HEADER {
        return Err(format_err(format!("unexpected bound-report header {header:?}")));
    }
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = k + 2;
        if rec.len() != BOUND_HEADER.len() {
            return Err(format_err(format!("line {line}: {} fields, expected {}", rec.len(), BOUND_HEADER.len())));
        }
        let f = |i: usize| parse::<f64>(&rec[i], BOUND_HEADER[i], line);
        out.push(BoundRow {
            method: rec[0].to_string(),
            seed: parse(&rec[1], "seed", line)?,
            train_err: f(2)?,
            test_err: f(3)?,
            c: f(4)?,
            q: f(5)?,
            d_theta: f(6)?,
            phi: f(7)?,
            bound_c: f(8)?,
            bound_d: f(9)?,
        });
    }
    Ok(out)
}

/// Header `epoch,train_loss,train_err[,worst_group_err][,side_loss]`; the
/// optional columns appear when every row has them.
pub fn trace_to_csv(rows: &[TraceRow]) -> Result<String> {
    let wg = !rows.is_empty() && rows.iter().all(|r| r.worst_group_err.is_some());
    let sl = !rows.is_empty() && rows.iter().all(|r| r.side_loss.is_some());
    let mut w = writer();
    let mut header = vec!["epoch", "train_loss", "train_err"];
    if wg {
        header.push("worst_group_err");
    }
    if sl {
        header.push("side_loss");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.epoch.to_string(), r.train_loss.to_string(), r.train_err.to_string()];
        if let (true, Some(v)) = (wg, r.worst_group_err) {
            rec.push(v.to_string());
        }
        if let (true, Some(v)) = (sl, r.side_loss) {
            rec.push(v.to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

pub fn trace_from_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut r = reader(text);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let names: Vec<&str> = header.iter().map(String::as_str).collect();
    let (wg, sl) = match names.as_slice() {
        ["epoch", "train_loss", "train_err"] => (false, false),
        ["epoch", "train_loss", "train_err", "worst_group_err"] => (true, false),
        ["epoch", "train_loss", "train_err", "side_loss"] => (false, true),
        ["epoch", "train_loss", "train_err", "worst_group_err", "side_loss"] => (true, true),
        _ => return Err(format_err(format!("unexpected trace header {names:?}"))),
    };
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = k + 2;
        if rec.len() != header.len() {
            return Err(format_err(format!("line {line}: {} fields, expected {}", rec.len(), header.len())));
        }
        let mut col = 3;
        let mut opt = |on: bool, what: &str| -> Result<Option<f64>> {
            if !on {
                return Ok(None);
            }
            col += 1;
            parse(&rec[col - 1], what, line).map(Some)
        };
        let worst_group_err = opt(wg, "worst_group_err")?;
        let side_loss = opt(sl, "side_loss")?;
        out.push(TraceRow {
            epoch: parse(&rec[0], "epoch", line)?,
            train_loss: parse(&rec[1], "train_loss", line)?,
            train_err: parse(&rec[2], "train_err", line)?,
            worst_group_err,
            side_loss,
        });
    }
    Ok(out)
}

const BAR_NAMES: [&str; 4] = ["train_err", "test_err", "train_err + c", "train_err + D"];
const BAR_COLORS: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

/// Grouped bar chart: per method, the seed means of training error, test
/// error, the c bound and the divergence bound, left to right. Methods keep
/// their first-appearance order. Each bar is a `rect` with class `bar`.
pub fn bounds_svg(rows: &[BoundRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let means: Vec<[f64; 4]> = methods
        .iter()
        .map(|m| {
            let sel: Vec<&BoundRow> = rows.iter().filter(|r| r.method == *m).collect();
            let k = sel.len() as f64;
            let avg = |f: fn(&BoundRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / k;
            [avg(|r| r.train_err), avg(|r| r.test_err), avg(|r| r.bound_c), avg(|r| r.bound_d)]
        })
        .collect();
    let top = means.iter().flatten().fold(1.0f64, |a, &b| a.max(b));
    let (left, plot_h, bar_w, gap) = (50.0, 240.0, 16.0, 24.0);
    let group_w = 4.0 * bar_w + gap;
    let width = left + group_w * methods.len().max(1) as f64 + 20.0;
    let height = plot_h + 110.0;
    let base = 20.0 + plot_h;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    s.push_str(&format!("<line x1=\"{left}\" y1=\"20\" x2=\"{left}\" y2=\"{base}\" stroke=\"black\"/>\n"));
    s.push_str(&format!("<line x1=\"{left}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>\n", width - 10.0));
    for t in 0..=4 {
        let v = top * t as f64 / 4.0;
        let y = base - plot_h * t as f64 / 4.0;
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{v:.2}</text>\n",
            left - 4.0,
            y + 3.0
        ));
    }
    for (gi, (m, vals)) in methods.iter().zip(&means).enumerate() {
        let x0 = left + gap / 2.0 + gi as f64 * group_w;
        for (bi, v) in vals.iter().enumerate() {
            let h = plot_h * v / top;
            s.push_str(&format!(
                "<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"{bar_w}\" height=\"{h}\" fill=\"{}\"><title>{} {}: {v}</title></rect>\n",
                x0 + bi as f64 * bar_w,
                base - h,
                BAR_COLORS[bi],
                escape(m),
                BAR_NAMES[bi],
            ));
        }
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            x0 + 2.0 * bar_w,
            base + 14.0,
            escape(m)
        ));
    }
    for (bi, name) in BAR_NAMES.iter().enumerate() {
        let y = base + 30.0 + 14.0 * bi as f64;
        s.push_str(&format!(
            "<rect class=\"swatch\" x=\"{left}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n",
            y - 9.0,
            BAR_COLORS[bi]
        ));
        s.push_str(&format!("<text x=\"{}\" y=\"{y}\" font-size=\"11\">{name}</text>\n", left + 14.0));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
