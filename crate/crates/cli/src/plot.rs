//! Standalone SVG charts rendered from the CSV artifacts.

use std::fmt::Write as _;

use faceaudit::sha256_hex;

use crate::args::PlotKind;
use crate::output::{CliResult, Failure};

pub const MAX_SVG_BYTES: usize = 2 * 1024 * 1024;
const MAX_CELLS: usize = 20_000;

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const W: f64 = 760.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn malformed(msg: impl Into<String>) -> Failure {
    Failure::Data(format!("malformed CSV: {}", msg.into()))
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| malformed(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(malformed("missing header line"));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| malformed(e.to_string()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { headers, rows })
    }

    fn col(&self, name: &str) -> CliResult<usize> {
        self.opt_col(name)
            .ok_or_else(|| malformed(format!("missing column {name:?}")))
    }

    fn opt_col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn num(&self, line: usize, col: usize) -> CliResult<f64> {
        let s = &self.rows[line][col];
        let v: f64 = s
            .parse()
            .map_err(|_| malformed(format!("line {}: {s:?} is not a number", line + 2)))?;
        if !v.is_finite() {
            return Err(malformed(format!("line {}: non-finite value {s:?}", line + 2)));
        }
        Ok(v)
    }

    fn index(&self, line: usize, col: usize) -> CliResult<usize> {
        let s = &self.rows[line][col];
        s.parse()
            .map_err(|_| malformed(format!("line {}: {s:?} is not a non-negative integer", line + 2)))
    }
}

/// Renders `csv_text` as an SVG chart of the given kind. `source` names the
/// CSV in the provenance comment.
pub fn render(kind: PlotKind, csv_text: &str, title: Option<&str>, source: &str) -> CliResult<String> {
    let table = Table::parse(csv_text)?;
    let mut svg = Svg::new(kind, csv_text, source);
    match kind {
        PlotKind::HistOverlay => hist_overlay(&mut svg, &table, title.unwrap_or("Score distributions"))?,
        PlotKind::Curve => curve(&mut svg, &table, title.unwrap_or("Cumulative explained variance"))?,
        PlotKind::Heatmap => heatmap(&mut svg, &table, title.unwrap_or("Heatmap"), false)?,
        PlotKind::DiffHeatmap => heatmap(&mut svg, &table, title.unwrap_or("Difference heatmap (M - F)"), true)?,
    }
    let out = svg.finish();
    if out.len() > MAX_SVG_BYTES {
        return Err(Failure::Data(format!("plot would exceed {MAX_SVG_BYTES} bytes")));
    }
    Ok(out)
}

struct Svg {
    body: String,
    header: String,
}

impl Svg {
    fn new(kind: PlotKind, csv_text: &str, source: &str) -> Self {
        let kind_name = match kind {
            PlotKind::HistOverlay => "hist-overlay",
            PlotKind::Heatmap => "heatmap",
            PlotKind::DiffHeatmap => "diff-heatmap",
            PlotKind::Curve => "curve",
        };
        let mut header = String::new();
        let _ = writeln!(
            header,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            header,
            "<!-- faceaudit {} plot kind={kind_name} source={} sha256={} -->",
            env!("CARGO_PKG_VERSION"),
            source.replace("--", "-"),
            sha256_hex(csv_text.as_bytes())
        );
        let _ = writeln!(header, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        Svg { body: String::new(), header }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, extra: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}"{extra}>{}</text>"#,
            escape(s)
        );
    }

    fn title(&mut self, s: &str) {
        self.text(W / 2.0, 24.0, "middle", r#" font-size="15""#, s);
    }

    fn axis_labels(&mut self, x0: f64, x1: f64, y0: f64, y1: f64, xlabel: &str, ylabel: &str) {
        self.text((x0 + x1) / 2.0, y1 + 42.0, "middle", r#" class="axis-label""#, xlabel);
        let (cx, cy) = (x0 - 50.0, (y0 + y1) / 2.0);
        self.text(
            cx,
            cy,
            "middle",
            &format!(r#" class="axis-label" transform="rotate(-90 {cx:.1} {cy:.1})""#),
            ylabel,
        );
    }

    fn no_data(&mut self) {
        self.text(W / 2.0, H / 2.0, "middle", r##" class="no-data" font-size="18" fill="#888""##, "no data");
    }

    fn legend(&mut self, entries: &[(String, String)]) {
        let x = W - RIGHT + 20.0;
        let _ = writeln!(self.body, r#"<g class="legend">"#);
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 10.0 + 20.0 * i as f64;
            let _ = writeln!(
                self.body,
                r#"<g class="legend-entry"><rect x="{x:.1}" y="{:.1}" width="14" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
                y - 9.0,
                x + 20.0,
                y,
                escape(label)
            );
        }
        let _ = writeln!(self.body, "</g>");
    }

    fn finish(self) -> String {
        let mut out = self.header;
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Linear plot frame with ticks; returns data-to-pixel maps.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn draw(&self, svg: &mut Svg, xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            svg.body,
            r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            x1 - x0,
            y1 - y0
        );
        for i in 0..=5 {
            let t = i as f64 / 5.0;
            let xv = self.x.0 + t * (self.x.1 - self.x.0);
            let yv = self.y.0 + t * (self.y.1 - self.y.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                svg.body,
                r##"<line x1="{xp:.1}" y1="{y1}" x2="{xp:.1}" y2="{:.1}" stroke="#333"/><line x1="{:.1}" y1="{yp:.1}" x2="{x0}" y2="{yp:.1}" stroke="#333"/>"##,
                y1 + 5.0,
                x0 - 5.0
            );
            svg.text(xp, y1 + 18.0, "middle", "", &tick_label(xv));
            svg.text(x0 - 8.0, yp + 4.0, "end", "", &tick_label(yv));
        }
        svg.axis_labels(x0, x1, y0, y1, xlabel, ylabel);
    }
}

/// Series keyed by first appearance.
fn group_rows(table: &Table, key_cols: &[usize]) -> Vec<(String, Vec<usize>)> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        let key = key_cols.iter().map(|&c| row[c].as_str()).collect::<Vec<_>>().join(" ");
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    groups
}

fn hist_overlay(svg: &mut Svg, table: &Table, title: &str) -> CliResult<()> {
    let lo_c = table.col("bin_lo")?;
    let hi_c = table.col("bin_hi")?;
    let n_c = table.col("count")?;
    let group_c = table.col("group")?;
    let mut keys = Vec::new();
    if let Some(s) = table.opt_col("series") {
        keys.push(s);
    }
    keys.push(group_c);

    struct Series {
        label: String,
        bins: Vec<(f64, f64, f64)>,
    }
    let mut series = Vec::new();
    for (label, lines) in group_rows(table, &keys) {
        let mut bins = Vec::with_capacity(lines.len());
        let mut total = 0.0;
        for &l in &lines {
            let (lo, hi, n) = (table.num(l, lo_c)?, table.num(l, hi_c)?, table.num(l, n_c)?);
            if hi <= lo || n < 0.0 {
                return Err(malformed(format!("line {}: bad bin [{lo}, {hi}) count {n}", l + 2)));
            }
            total += n;
            bins.push((lo, hi, n));
        }
        if total > 0.0 {
            for b in &mut bins {
                b.2 /= total * (b.1 - b.0);
            }
        }
        series.push((Series { label, bins }, total));
    }

    svg.title(title);
    let occupied: Vec<&(f64, f64, f64)> = series
        .iter()
        .filter(|(_, t)| *t > 0.0)
        .flat_map(|(s, _)| s.bins.iter().filter(|b| b.2 > 0.0))
        .collect();
    if occupied.is_empty() {
        Frame { x: (0.0, 1.0), y: (0.0, 1.0) }.draw(svg, "score", "density");
        svg.no_data();
        return Ok(());
    }
    let mut x0 = occupied.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let mut x1 = occupied.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    let pad = (x1 - x0) * 0.02;
    x0 -= pad;
    x1 += pad;
    let ymax = occupied.iter().map(|b| b.2).fold(0.0, f64::max) * 1.05;
    let frame = Frame { x: (x0, x1), y: (0.0, ymax) };
    frame.draw(svg, "score", "density");

    let mut legend = Vec::new();
    for (i, (s, total)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        legend.push((format!("{} (n={})", s.label, total), color.to_string()));
        if *total == 0.0 {
            continue;
        }
        let mut d = String::new();
        let mut started = false;
        for &(lo, hi, dens) in &s.bins {
            if hi < x0 || lo > x1 {
                continue;
            }
            let (a, b) = (frame.px(lo.max(x0)), frame.px(hi.min(x1)));
            if !started {
                let _ = write!(d, "M{a:.1},{:.1}", frame.py(0.0));
                started = true;
            }
            let _ = write!(d, "V{:.1}H{b:.1}", frame.py(dens));
        }
        let _ = write!(d, "V{:.1}", frame.py(0.0));
        let _ = writeln!(
            svg.body,
            r#"<path d="{d}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="1.2"/>"#
        );
    }
    svg.legend(&legend);
    Ok(())
}

fn curve(svg: &mut Svg, table: &Table, title: &str) -> CliResult<()> {
    let group_c = table.col("group")?;
    let k_c = table.col("component_index")?;
    let f_c = table.col("cumulative_fraction")?;
    let mut series = Vec::new();
    for (label, lines) in group_rows(table, &[group_c]) {
        let mut pts = Vec::with_capacity(lines.len());
        for &l in &lines {
            pts.push((table.index(l, k_c)? as f64, table.num(l, f_c)?));
        }
        series.push((label, pts));
    }
    svg.title(title);
    let xmax = series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.0))
        .fold(0.0, f64::max);
    if series.is_empty() || xmax == 0.0 {
        Frame { x: (0.0, 1.0), y: (0.0, 1.0) }.draw(svg, "number of components", "cumulative variance fraction");
        svg.no_data();
        return Ok(());
    }
    let frame = Frame { x: (0.0, xmax.max(1.0)), y: (0.0, 1.0) };
    frame.draw(svg, "number of components", "cumulative variance fraction");
    let mut legend = Vec::new();
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        legend.push((label.clone(), color.to_string()));
        let mut d = format!("M{:.1},{:.1}", frame.px(0.0), frame.py(0.0));
        for &(k, f) in pts {
            let _ = write!(d, "L{:.1},{:.1}", frame.px(k), frame.py(f.clamp(0.0, 1.0)));
        }
        let _ = writeln!(svg.body, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
    }
    svg.legend(&legend);
    Ok(())
}

fn lerp_hex(from: [u8; 3], to: [u8; 3], t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c: Vec<u8> = (0..3)
        .map(|i| (from[i] as f64 + (to[i] as f64 - from[i] as f64) * t).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

const WHITE: [u8; 3] = [255, 255, 255];
const NAVY: [u8; 3] = [8, 48, 107];
const BLUE: [u8; 3] = [33, 102, 172];
const RED: [u8; 3] = [178, 24, 43];

/// Sequential ramp from white at `lo` to navy at `hi`.
pub fn sequential_color(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
    lerp_hex(WHITE, NAVY, t)
}

/// Diverging ramp on `[-vmax, vmax]`: white at zero, blue for positive
/// values, red for negative.
pub fn diverging_color(v: f64, vmax: f64) -> String {
    if vmax <= 0.0 || v == 0.0 {
        return lerp_hex(WHITE, WHITE, 0.0);
    }
    if v > 0.0 {
        lerp_hex(WHITE, BLUE, v / vmax)
    } else {
        lerp_hex(WHITE, RED, -v / vmax)
    }
}

fn heatmap(svg: &mut Svg, table: &Table, title: &str, diverging: bool) -> CliResult<()> {
    let r_c = table.col("row")?;
    let c_c = table.col("col")?;
    let v_c = table.col("value")?;
    svg.title(title);
    if table.rows.is_empty() {
        svg.no_data();
        return Ok(());
    }
    let mut cells = Vec::with_capacity(table.rows.len());
    let (mut h, mut w) = (0, 0);
    for l in 0..table.rows.len() {
        let (r, c, v) = (table.index(l, r_c)?, table.index(l, c_c)?, table.num(l, v_c)?);
        h = h.max(r + 1);
        w = w.max(c + 1);
        cells.push((r, c, v));
    }
    if h.saturating_mul(w) > 16 * 1024 * 1024 {
        return Err(malformed(format!("grid {h}x{w} too large")));
    }
    let mut grid = vec![f64::NAN; h * w];
    for &(r, c, v) in &cells {
        let slot = &mut grid[r * w + c];
        if !slot.is_nan() {
            return Err(malformed(format!("cell ({r}, {c}) listed twice")));
        }
        *slot = v;
    }

    // Average f x f blocks so the cell count stays bounded.
    let mut f = 1;
    while (h.div_ceil(f)) * (w.div_ceil(f)) > MAX_CELLS {
        f += 1;
    }
    let (gh, gw) = (h.div_ceil(f), w.div_ceil(f));
    let mut coarse = vec![f64::NAN; gh * gw];
    for gr in 0..gh {
        for gc in 0..gw {
            let (mut s, mut n) = (0.0, 0usize);
            for r in gr * f..((gr + 1) * f).min(h) {
                for c in gc * f..((gc + 1) * f).min(w) {
                    let v = grid[r * w + c];
                    if !v.is_nan() {
                        s += v;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                coarse[gr * gw + gc] = s / n as f64;
            }
        }
    }

    let known = coarse.iter().copied().filter(|v| !v.is_nan());
    let (vmin, vmax) = known.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if diverging {
        let m = vmin.abs().max(vmax.abs());
        (-m, m)
    } else if vmin >= 0.0 && vmax <= 1.0 {
        (0.0, 1.0)
    } else {
        (vmin, vmax)
    };
    let color = |v: f64| {
        if diverging {
            diverging_color(v, hi)
        } else {
            sequential_color(v, lo, hi)
        }
    };

    let area = H - TOP - BOTTOM;
    let cell = (area / gh as f64).min((W - LEFT - RIGHT) / gw as f64);
    let (x0, y0) = (LEFT, TOP);
    let _ = writeln!(
        svg.body,
        r##"<rect x="{x0}" y="{y0}" width="{:.2}" height="{:.2}" fill="#ffffff" stroke="#333"/>"##,
        cell * gw as f64,
        cell * gh as f64
    );
    let _ = writeln!(svg.body, r#"<g class="cells" shape-rendering="crispEdges">"#);
    for gr in 0..gh {
        for gc in 0..gw {
            let v = coarse[gr * gw + gc];
            let fill = if v.is_nan() { "#cccccc".to_string() } else { color(v) };
            if fill == "#ffffff" {
                continue;
            }
            let _ = writeln!(
                svg.body,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                x0 + gc as f64 * cell,
                y0 + gr as f64 * cell,
                cell,
                cell
            );
        }
    }
    let _ = writeln!(svg.body, "</g>");
    let gx1 = x0 + cell * gw as f64;
    let gy1 = y0 + cell * gh as f64;
    let xlabel = if f > 1 { format!("column (blocks of {f})") } else { "column".to_string() };
    let ylabel = if f > 1 { format!("row (blocks of {f})") } else { "row".to_string() };
    svg.axis_labels(x0, gx1, y0, gy1, &xlabel, &ylabel);
    svg.text(x0, gy1 + 16.0, "start", "", "0");
    svg.text(gx1, gy1 + 16.0, "end", "", &(w - 1).to_string());
    svg.text(x0 - 6.0, y0 + 10.0, "end", "", "0");
    svg.text(x0 - 6.0, gy1, "end", "", &(h - 1).to_string());

    // Color bar.
    let bx = W - RIGHT + 30.0;
    let steps = 20;
    let bh = (H - TOP - BOTTOM) / steps as f64;
    let _ = writeln!(svg.body, r#"<g class="colorbar">"#);
    for i in 0..steps {
        let t = 1.0 - (i as f64 + 0.5) / steps as f64;
        let v = lo + t * (hi - lo);
        let _ = writeln!(
            svg.body,
            r#"<rect x="{bx}" y="{:.2}" width="18" height="{:.2}" fill="{}"/>"#,
            TOP + i as f64 * bh,
            bh + 0.5,
            color(v)
        );
    }
    let _ = writeln!(svg.body, "</g>");
    svg.text(bx + 24.0, TOP + 10.0, "start", "", &tick_label(hi));
    svg.text(bx + 24.0, H - BOTTOM, "start", "", &tick_label(lo));
    if diverging {
        svg.text(bx + 24.0, (TOP + H - BOTTOM) / 2.0 + 4.0, "start", r#" class="midpoint""#, "0");
        svg.legend_below(
            bx - 10.0,
            H - BOTTOM + 20.0,
            &[
                ("M > F".to_string(), lerp_hex(WHITE, BLUE, 1.0)),
                ("F > M".to_string(), lerp_hex(WHITE, RED, 1.0)),
            ],
        );
    } else {
        svg.legend_below(bx - 10.0, H - BOTTOM + 20.0, &[("value".to_string(), lerp_hex(WHITE, NAVY, 1.0))]);
    }
    Ok(())
}

impl Svg {
    fn legend_below(&mut self, x: f64, y: f64, entries: &[(String, String)]) {
        let _ = writeln!(self.body, r#"<g class="legend">"#);
        for (i, (label, color)) in entries.iter().enumerate() {
            let yy = y + 16.0 * i as f64;
            let _ = writeln!(
                self.body,
                r#"<g class="legend-entry"><rect x="{x:.1}" y="{:.1}" width="14" height="10" fill="{color}"/><text x="{:.1}" y="{yy:.1}">{}</text></g>"#,
                yy - 9.0,
                x + 20.0,
                escape(label)
            );
        }
        let _ = writeln!(self.body, "</g>");
    }
}
