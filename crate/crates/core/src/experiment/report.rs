use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;

use super::{ExperimentConfig, Format, RunOutput, RunRecord};
use crate::error::{Error, Result};
use crate::sring::{parse_rational, prime_power, to_f64, NormProfile};

fn primes_of(records: &[RunRecord]) -> Vec<u64> {
    let set: BTreeSet<u64> = records.iter().flat_map(|r| r.profile.exponents().keys().copied()).collect();
    set.into_iter().collect()
}

/// RFC 4180 CSV with columns `seed, sample, step, T_inf, T_p..., V, N, ratio`.
pub fn write_csv<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let primes = primes_of(records);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["seed".to_string(), "sample".into(), "step".into(), "T_inf".into()];
    header.extend(primes.iter().map(|p| format!("T_{p}")));
    header.extend(["V".into(), "N".into(), "ratio".into()]);
    out.write_record(&header)?;
    for r in records {
        let mut row = vec![r.seed.to_string(), r.sample.to_string(), r.step.to_string(), r.profile.real().to_string()];
        row.extend(primes.iter().map(|&p| prime_power(p, r.profile.exponent(p)).to_string()));
        row.extend([r.volume.to_string(), r.count.to_string(), r.ratio.to_string()]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    row.get(i)
        .ok_or_else(|| Error::Parse(format!("missing column {name}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad {name} value {:?}", row.get(i))))
}

/// `e` with `x = p^e`.
fn exponent_of(x: &BigRational, p: u64) -> Result<i64> {
    let (mut num, mut den) = (x.numer().clone(), x.denom().clone());
    let bp = BigInt::from(p);
    let mut e = 0i64;
    while num > BigInt::one() && (&num % &bp) == BigInt::from(0) {
        num /= &bp;
        e += 1;
    }
    while den > BigInt::one() && (&den % &bp) == BigInt::from(0) {
        den /= &bp;
        e -= 1;
    }
    if num.is_one() && den.is_one() {
        Ok(e)
    } else {
        Err(Error::Parse(format!("T_{p} = {x} is not a power of {p}")))
    }
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let fixed_head = ["seed", "sample", "step", "T_inf"];
    let fixed_tail = ["V", "N", "ratio"];
    if cols.len() < 7 || cols[..4] != fixed_head || cols[cols.len() - 3..] != fixed_tail {
        return Err(Error::Parse(format!("unexpected header {cols:?}")));
    }
    let primes = cols[4..cols.len() - 3]
        .iter()
        .map(|c| {
            c.strip_prefix("T_")
                .and_then(|p| p.parse::<u64>().ok())
                .ok_or_else(|| Error::Parse(format!("bad place column {c:?}")))
        })
        .collect::<Result<Vec<u64>>>()?;
    let k = primes.len();
    let mut records = Vec::new();
    for row in rd.records() {
        let row = row?;
        if row.len() != cols.len() {
            return Err(Error::Parse(format!("row has {} fields, expected {}", row.len(), cols.len())));
        }
        let t_inf = parse_rational(&row[3])?;
        let fin = primes
            .iter()
            .enumerate()
            .map(|(i, &p)| Ok((p, exponent_of(&parse_rational(&row[4 + i])?, p)?)))
            .collect::<Result<_>>()?;
        records.push(RunRecord {
            seed: field(&row, 0, "seed")?,
            sample: field(&row, 1, "sample")?,
            step: field(&row, 2, "step")?,
            profile: NormProfile::new(t_inf, fin)?,
            volume: field(&row, 4 + k, "V")?,
            count: field(&row, 5 + k, "N")?,
            ratio: field(&row, 6 + k, "ratio")?,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(records)
}

pub fn write_json<W: Write>(output: &RunOutput, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, output)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// The configuration echoed in a JSON report.
pub fn config_from_json_report(json: &str) -> Result<ExperimentConfig> {
    let mut v: serde_json::Value = serde_json::from_str(json)?;
    let c = v
        .get_mut("config")
        .map(serde_json::Value::take)
        .ok_or_else(|| Error::Parse("report has no config".into()))?;
    let config: ExperimentConfig = serde_json::from_value(c)?;
    config.validate()?;
    Ok(config)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Ratio against `log10 |T|`, one polyline per sample and a dashed line at 1.
pub fn render_svg(records: &[RunRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let x_of = |r: &RunRecord| to_f64(&r.profile.size()).log10();
    let finite: Vec<&RunRecord> = records.iter().filter(|r| r.ratio.is_finite()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (1.0f64, 1.0f64);
    for r in &finite {
        x0 = x0.min(x_of(r));
        x1 = x1.max(x_of(r));
        y0 = y0.min(r.ratio);
        y1 = y1.max(r.ratio);
    }
    if !x0.is_finite() {
        x0 = 0.0;
        x1 = 1.0;
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(0.05);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<line class="reference" x1="{l}" y1="{y:.3}" x2="{r}" y2="{y:.3}" stroke="gray" stroke-dasharray="6 4"/>"#,
        y = sy(1.0)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">log10 |T|</text>"#, WIDTH / 2.0, HEIGHT - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 15 {})">ratio N N^d / V</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (tx, ty, label) in [(l, b + 18.0, format!("{x0:.2}")), (r, b + 18.0, format!("{x1:.2}"))] {
        let _ = writeln!(s, r#"<text x="{tx}" y="{ty}" text-anchor="middle" font-size="12">{label}</text>"#);
    }
    for (y, label) in [(y0, format!("{y0:.3}")), (y1, format!("{y1:.3}")), (1.0, "1".to_string())] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.3}" text-anchor="end" font-size="12">{label}</text>"#, l - 6.0, sy(y) + 4.0);
    }
    for (sample, traj) in super::trajectories(records) {
        let pts: Vec<String> = traj
            .iter()
            .filter(|r| r.ratio.is_finite())
            .map(|r| format!("{:.3},{:.3}", sx(x_of(r)), sy(r.ratio)))
            .collect();
        let hue = (sample * 47) % 360;
        let _ = writeln!(
            s,
            r#"<polyline class="sample" data-sample="{sample}" points="{}" fill="none" stroke="hsl({hue},60%,45%)" stroke-width="1.2"/>"#,
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Write one report file into `dir` and return its path.
pub fn emit_report(output: &RunOutput, format: Format, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("report.{}", format.extension()));
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(&output.records, &mut buf)?;
            std::fs::write(&path, buf)?;
        }
        Format::Json => {
            let mut buf = Vec::new();
            write_json(output, &mut buf)?;
            std::fs::write(&path, buf)?;
        }
        Format::Svg => std::fs::write(&path, render_svg(&output.records)?)?,
    }
    Ok(path)
}
