//! File formats.
//!
//! * Images: 16-bit binary PGM (`P5`, big-endian, linearly scaled to
//!   `0..=65535` with the original range in a comment) for viewing, and CSV
//!   (one line per image row, shortest round-trip decimals) for lossless
//!   storage. Both carry the grid in a `#` comment line.
//! * Matrices: `PACTMAT <domain> <rows> <cols>\n` then little-endian `f64`
//!   entries, row-major, complex entries as interleaved `re, im`.
//! * Signals: `PACTSIG <domain> <p> <q>\n` then the same raw encoding.
//! * Objective histories: CSV with header `iter,F,data,l1,tv`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{PactError, Result};
use crate::forward::{Domain, MeasurementMatrix, Operator, Samples, SensorData};
use crate::geometry::{ImageField, ImagingGrid};
use crate::parkernel::DenseMatrix;
use crate::recon::ReconResult;

const PGM_MAX: f64 = 65535.0;

fn grid_comment(grid: &ImagingGrid) -> String {
    let [ox, oy] = grid.origin();
    format!(
        "# grid nx={} ny={} dx={:?} ox={:?} oy={:?}",
        grid.nx(),
        grid.ny(),
        grid.dx(),
        ox,
        oy
    )
}

/// Parses `key=value` tokens from a comment line.
fn comment_fields(line: &str) -> impl Iterator<Item = (&str, &str)> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter_map(|tok| tok.split_once('='))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| PactError::Format(format!("bad value `{value}` for `{key}`")))
}

#[derive(Default)]
struct GridHint {
    nx: Option<usize>,
    ny: Option<usize>,
    dx: Option<f64>,
    ox: Option<f64>,
    oy: Option<f64>,
}

impl GridHint {
    fn absorb(&mut self, line: &str) -> Result<()> {
        for (k, v) in comment_fields(line) {
            match k {
                "nx" => self.nx = Some(parse_num(k, v)?),
                "ny" => self.ny = Some(parse_num(k, v)?),
                "dx" => self.dx = Some(parse_num(k, v)?),
                "ox" => self.ox = Some(parse_num(k, v)?),
                "oy" => self.oy = Some(parse_num(k, v)?),
                _ => {}
            }
        }
        Ok(())
    }

    /// Grid for an `nx x ny` image; unit pitch centred at the origin when
    /// the file carries no grid comment.
    fn resolve(&self, nx: usize, ny: usize) -> Result<ImagingGrid> {
        if self.nx.is_some_and(|v| v != nx) || self.ny.is_some_and(|v| v != ny) {
            return Err(PactError::Format(format!(
                "grid comment disagrees with {nx}x{ny} image data"
            )));
        }
        match (self.dx, self.ox, self.oy) {
            (Some(dx), Some(ox), Some(oy)) => ImagingGrid::new(nx, ny, dx, [ox, oy]),
            _ => ImagingGrid::centered(nx, ny, 1.0),
        }
    }
}

pub fn write_image_csv<W: Write>(field: &ImageField, mut out: W) -> Result<()> {
    let nx = field.grid().nx();
    writeln!(out, "{}", grid_comment(field.grid()))?;
    for row in field.values().chunks(nx) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_image_csv<R: BufRead>(input: R) -> Result<ImageField> {
    let mut hint = GridHint::default();
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            hint.absorb(line)?;
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            values.push(parse_num::<f64>("pixel", cell.trim())?);
        }
        let w = values.len() - before;
        if *width.get_or_insert(w) != w {
            return Err(PactError::Format(format!(
                "row {rows} has {w} values, expected {}",
                width.unwrap_or(0)
            )));
        }
        rows += 1;
    }
    let nx = width.ok_or_else(|| PactError::Format("image CSV has no data rows".into()))?;
    let grid = hint.resolve(nx, rows)?;
    ImageField::from_values(grid, values)
}

/// Writes `P5` with 16-bit big-endian samples, row `j = 0` first.
pub fn write_image_pgm<W: Write>(field: &ImageField, mut out: W) -> Result<()> {
    let (lo, hi) = field
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    write!(
        out,
        "P5\n# range min={lo:?} max={hi:?}\n{}\n{} {}\n65535\n",
        grid_comment(field.grid()),
        field.grid().nx(),
        field.grid().ny()
    )?;
    let mut bytes = Vec::with_capacity(field.values().len() * 2);
    for &v in field.values() {
        let level = if span > 0.0 {
            ((v - lo) / span * PGM_MAX).round().clamp(0.0, PGM_MAX) as u16
        } else {
            0
        };
        bytes.extend_from_slice(&level.to_be_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Reads 8- or 16-bit `P5`. When the range comment is present, samples are
/// mapped back to it; otherwise they are scaled to `[0, 1]`.
pub fn read_image_pgm<R: BufRead>(mut input: R) -> Result<ImageField> {
    let mut hint = GridHint::default();
    let (mut lo, mut hi) = (None, None);
    let mut header: Vec<usize> = Vec::new();
    let mut magic = None;
    while header.len() < 3 {
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Err(PactError::Format("truncated PGM header".into()));
        }
        let line = line.trim();
        if line.starts_with('#') {
            hint.absorb(line)?;
            for (k, v) in comment_fields(line) {
                match k {
                    "min" => lo = Some(parse_num::<f64>(k, v)?),
                    "max" => hi = Some(parse_num::<f64>(k, v)?),
                    _ => {}
                }
            }
            continue;
        }
        for tok in line.split_whitespace() {
            if magic.is_none() {
                if tok != "P5" {
                    return Err(PactError::Format(format!("not a binary PGM (magic `{tok}`)")));
                }
                magic = Some(());
            } else {
                header.push(parse_num("PGM header", tok)?);
            }
        }
    }
    let (nx, ny, maxval) = (header[0], header[1], header[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(PactError::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let width = if maxval > 255 { 2 } else { 1 };
    let mut raw = vec![0u8; nx * ny * width];
    input.read_exact(&mut raw)?;
    let (lo, hi) = (lo.unwrap_or(0.0), hi.unwrap_or(1.0));
    let values = raw
        .chunks(width)
        .map(|c| {
            let level = if width == 2 {
                u16::from_be_bytes([c[0], c[1]]) as f64
            } else {
                c[0] as f64
            };
            lo + level / maxval as f64 * (hi - lo)
        })
        .collect();
    ImageField::from_values(hint.resolve(nx, ny)?, values)
}

/// Opens either image format, sniffing the `P5` magic.
pub fn read_image(path: &Path) -> Result<ImageField> {
    let mut reader = BufReader::new(File::open(path)?);
    let head = reader.fill_buf()?;
    if head.starts_with(b"P5") {
        read_image_pgm(reader)
    } else {
        read_image_csv(reader)
    }
}

pub fn save_image_csv(field: &ImageField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_image_csv(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_image_pgm(field: &ImageField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_image_pgm(field, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_header<W: Write>(out: &mut W, tag: &str, domain: Domain, a: usize, b: usize) -> Result<()> {
    writeln!(out, "{tag} {domain} {a} {b}")?;
    Ok(())
}

fn read_header<R: BufRead>(input: &mut R, tag: &str) -> Result<(Domain, usize, usize)> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    match fields.as_slice() {
        [t, domain, a, b] if *t == tag => Ok((
            domain.parse().map_err(|_| PactError::Format(format!("bad domain `{domain}`")))?,
            parse_num(tag, a)?,
            parse_num(tag, b)?,
        )),
        _ => Err(PactError::Format(format!(
            "expected `{tag} <domain> <n> <m>` header, got `{}`",
            line.trim_end()
        ))),
    }
}

fn write_reals<W: Write>(out: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn write_complex<W: Write>(out: &mut W, values: &[Complex64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 16);
    for v in values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_reals<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut raw = vec![0u8; n * 8];
    input.read_exact(&mut raw)?;
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(PactError::Format("trailing bytes after payload".into()));
    }
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn read_complex<R: Read>(input: &mut R, n: usize) -> Result<Vec<Complex64>> {
    let flat = read_reals(input, 2 * n)?;
    Ok(flat.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

pub fn write_matrix<W: Write>(k: &MeasurementMatrix, mut out: W) -> Result<()> {
    write_header(&mut out, "PACTMAT", k.domain(), k.rows(), k.cols())?;
    match k.operator() {
        Operator::Time(m) => write_reals(&mut out, m.data()),
        Operator::Frequency(m) => write_complex(&mut out, m.data()),
    }
}

/// Reads a `PACTMAT` payload; the caller supplies the sensor split of the
/// rows, which the format does not record.
pub fn read_matrix<R: BufRead>(mut input: R, sensors: usize) -> Result<MeasurementMatrix> {
    let (domain, rows, cols) = read_header(&mut input, "PACTMAT")?;
    if sensors == 0 || rows % sensors != 0 {
        return Err(PactError::dims(format!(
            "{rows} matrix rows do not split into {sensors} sensors"
        )));
    }
    let op = match domain {
        Domain::Time => Operator::Time(DenseMatrix::new(rows, cols, read_reals(&mut input, rows * cols)?)?),
        Domain::Frequency => Operator::Frequency(DenseMatrix::new(
            rows,
            cols,
            read_complex(&mut input, rows * cols)?,
        )?),
    };
    MeasurementMatrix::from_operator(op, sensors, rows / sensors)
}

pub fn write_signal<W: Write>(y: &SensorData, mut out: W) -> Result<()> {
    write_header(&mut out, "PACTSIG", y.domain(), y.sensors(), y.samples_per_sensor())?;
    match y.samples() {
        Samples::Time(v) => write_reals(&mut out, v),
        Samples::Frequency(v) => write_complex(&mut out, v),
    }
}

pub fn read_signal<R: BufRead>(mut input: R) -> Result<SensorData> {
    let (domain, p, q) = read_header(&mut input, "PACTSIG")?;
    let samples = match domain {
        Domain::Time => Samples::Time(read_reals(&mut input, p * q)?),
        Domain::Frequency => Samples::Frequency(read_complex(&mut input, p * q)?),
    };
    SensorData::new(p, q, samples)
}

pub fn save_matrix(k: &MeasurementMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(k, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix(path: &Path, sensors: usize) -> Result<MeasurementMatrix> {
    read_matrix(BufReader::new(File::open(path)?), sensors)
}

pub fn save_signal(y: &SensorData, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_signal(y, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_signal(path: &Path) -> Result<SensorData> {
    read_signal(BufReader::new(File::open(path)?))
}

pub fn write_history<W: Write>(result: &ReconResult, mut out: W) -> Result<()> {
    writeln!(out, "iter,F,data,l1,tv")?;
    for i in 0..result.iterations_run {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?}",
            i + 1,
            result.objective_history[i],
            result.data_term_history[i],
            result.l1_history[i],
            result.tv_history[i]
        )?;
    }
    Ok(())
}

pub fn save_history(result: &ReconResult, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_history(result, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{build_matrix, forward_project};
    use crate::geometry::make_vessel_phantom;
    use crate::parkernel::Kernels;
    use crate::scene::{Preset, SceneSpec};

    fn phantom() -> ImageField {
        let grid = ImagingGrid::new(12, 9, 2.5e-4, [-1e-3, 3e-4]).unwrap();
        make_vessel_phantom(grid, 3, 4).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut field = phantom().into_values();
        field[5] = -1.0 / 3.0;
        field[6] = 1e-300;
        let grid = ImagingGrid::new(12, 9, 2.5e-4, [-1e-3, 3e-4]).unwrap();
        let field = ImageField::from_values(grid, field).unwrap();
        let mut buf = Vec::new();
        write_image_csv(&field, &mut buf).unwrap();
        let back = read_image_csv(buf.as_slice()).unwrap();
        assert_eq!(back, field);
    }

    #[test]
    fn csv_without_comment_gets_default_grid() {
        let back = read_image_csv("1,2,3\n4,5,6\n".as_bytes()).unwrap();
        assert_eq!((back.grid().nx(), back.grid().ny()), (3, 2));
        assert_eq!(back.get(2, 1), 6.0);
        assert!(read_image_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(read_image_csv("".as_bytes()).is_err());
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let field = phantom();
        let mut buf = Vec::new();
        write_image_pgm(&field, &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n"));
        let back = read_image_pgm(buf.as_slice()).unwrap();
        assert_eq!(back.grid(), field.grid());
        let step = (1.0 - 0.0) / 65535.0;
        for (a, b) in back.values().iter().zip(field.values()) {
            assert!((a - b).abs() <= step / 2.0 + 1e-15);
        }
    }

    #[test]
    fn pgm_header_layout() {
        let grid = ImagingGrid::new(2, 1, 1.0, [0.0, 0.0]).unwrap();
        let field = ImageField::from_values(grid, vec![-1.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_image_pgm(&field, &mut buf).unwrap();
        let n = buf.len();
        assert_eq!(&buf[n - 4..], &[0x00, 0x00, 0xff, 0xff]);
        let text = String::from_utf8_lossy(&buf[..n - 4]);
        assert!(text.contains("# range min=-1.0 max=3.0\n"));
        assert!(text.ends_with("2 1\n65535\n"));
    }

    #[test]
    fn read_image_sniffs_format() {
        let dir = tempfile::tempdir().unwrap();
        let field = phantom();
        let csv = dir.path().join("a.csv");
        let pgm = dir.path().join("a.pgm");
        save_image_csv(&field, &csv).unwrap();
        save_image_pgm(&field, &pgm).unwrap();
        assert_eq!(read_image(&csv).unwrap(), field);
        assert_eq!(read_image(&pgm).unwrap().grid(), field.grid());
    }

    #[test]
    fn matrix_and_signal_round_trip_both_domains() {
        let spec = SceneSpec {
            grid_size: 8,
            sensors: 4,
            samples: 16,
            ..SceneSpec::preset(Preset::Desk32)
        };
        let grid = spec.grid().unwrap();
        let (ring, acoustic) = spec.geometry(&grid).unwrap();
        let truth = make_vessel_phantom(grid, 1, 3).unwrap();
        for domain in [Domain::Time, Domain::Frequency] {
            let k = build_matrix(domain, &grid, &ring, &acoustic).unwrap();
            let mut buf = Vec::new();
            write_matrix(&k, &mut buf).unwrap();
            let header = format!("PACTMAT {domain} {} {}\n", k.rows(), k.cols());
            assert!(buf.starts_with(header.as_bytes()));
            let back = read_matrix(buf.as_slice(), 4).unwrap();
            assert_eq!(back.operator(), k.operator());
            assert_eq!(back.samples_per_sensor(), k.samples_per_sensor());

            let y = forward_project(&k, &truth, Kernels::Serial).unwrap();
            let mut buf = Vec::new();
            write_signal(&y, &mut buf).unwrap();
            let header = format!("PACTSIG {domain} 4 {}\n", k.samples_per_sensor());
            assert!(buf.starts_with(header.as_bytes()));
            let bytes_per = if domain == Domain::Time { 8 } else { 16 };
            assert_eq!(buf.len(), header.len() + y.len() * bytes_per);
            assert_eq!(read_signal(buf.as_slice()).unwrap(), y);
        }
    }

    #[test]
    fn malformed_binary_files_are_rejected() {
        assert!(read_signal("PACTSIG time 2 2\n".as_bytes()).is_err());
        assert!(read_signal("PACTMAT time 2 2\n".as_bytes()).is_err());
        assert!(read_signal("PACTSIG spatial 1 1\n\0\0\0\0\0\0\0\0".as_bytes()).is_err());
        let mut extra = b"PACTSIG time 1 1\n".to_vec();
        extra.extend_from_slice(&[0u8; 9]);
        assert!(read_signal(extra.as_slice()).is_err());
        assert!(read_matrix("PACTMAT time 3 1\n".as_bytes(), 2).is_err());
    }
}
