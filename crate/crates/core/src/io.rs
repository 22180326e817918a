//! CSV reading and writing for point clouds and per-point sidecar tables.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{ManifoldSample, NoiseRealization};

/// Writes a point matrix with header `x0,x1,...`.
pub fn write_points_csv(path: &Path, points: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (0..points.ncols()).map(|j| format!("x{j}")).collect();
    w.write_record(&header)?;
    for row in points.rows() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV. A first line that does not parse as numbers is
/// treated as a header.
pub fn read_points_csv(path: &Path) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(k + 1);
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|t| t.parse::<f64>()).collect();
        let vals = match parsed {
            Ok(v) => v,
            Err(_) if k == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: "non-numeric field".into(),
                })
            }
        };
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected {w} fields, found {}", vals.len()),
                })
            }
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    let Some(m) = width else {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "no data rows".into(),
        });
    };
    Array2::from_shape_vec((rows, m), data).map_err(|e| Error::Dimension(e.to_string()))
}

/// Per-point ground truth: `index,angle,radius,true_density,true_noise_sq`.
pub fn write_sidecar_csv(path: &Path, sample: &ManifoldSample, noise: Option<&NoiseRealization>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "angle", "radius", "true_density", "true_noise_sq"])?;
    for i in 0..sample.len() {
        let eta = noise.map(|r| r.true_noise_sq[i]).unwrap_or(0.0);
        w.write_record([
            i.to_string(),
            format!("{:e}", sample.angles[i]),
            format!("{:e}", sample.radius_labels[i]),
            format!("{:e}", sample.density_values[i]),
            format!("{eta:e}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar columns read back by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sidecar {
    pub angle: Vec<f64>,
    pub radius: Vec<f64>,
    pub true_density: Vec<f64>,
    pub true_noise_sq: Vec<f64>,
}

pub fn read_sidecar_csv(path: &Path) -> Result<Sidecar> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (a, r, d, e) = (col("angle"), col("radius"), col("true_density"), col("true_noise_sq"));
    let mut out = Sidecar::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |c: Option<usize>| -> Result<Option<f64>> {
            match c {
                None => Ok(None),
                Some(c) => rec
                    .get(c)
                    .unwrap_or("")
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: "non-numeric sidecar field".into(),
                    }),
            }
        };
        if let Some(v) = get(a)? {
            out.angle.push(v);
        }
        if let Some(v) = get(r)? {
            out.radius.push(v);
        }
        if let Some(v) = get(d)? {
            out.true_density.push(v);
        }
        if let Some(v) = get(e)? {
            out.true_noise_sq.push(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_circle;

    #[test]
    fn points_survive_a_write_and_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        let s = sample_circle(20, 1.0, 1.0, 4).unwrap();
        write_points_csv(&p, &s.clean_points).unwrap();
        let back = read_points_csv(&p).unwrap();
        assert_eq!(back, s.clean_points);

        let side = dir.path().join("side.csv");
        write_sidecar_csv(&side, &s, None).unwrap();
        let sc = read_sidecar_csv(&side).unwrap();
        assert_eq!(sc.angle, s.angles);
        assert_eq!(sc.true_density, s.density_values);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_points_csv(&p).is_err());
        std::fs::write(&p, "").unwrap();
        assert!(read_points_csv(&p).is_err());
    }
}
