//! CSV exchange for measures, point clouds and hit samples.
//!
//! Files carry a header row. Readers also accept headerless files: a first
//! row that does not parse as numbers is taken to be a header.

use std::io::{Read, Write};

use crate::error::{LabError, Result};
use crate::geometry::{Cell, Point, ShapeSpec};
use crate::kernel::DiscreteMeasure;

fn coord_header(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn numeric_rows(reader: impl Read) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push((line, v)),
            Err(_) if rows.is_empty() && i == 0 => continue,
            Err(e) => {
                return Err(LabError::Parse {
                    line,
                    message: format!("not a number: {e}"),
                })
            }
        }
    }
    Ok(rows)
}

/// Rows of `columns` numbers each, `columns ≥ extra + 3`.
fn split_rows(rows: Vec<(usize, Vec<f64>)>, extra: usize) -> Result<Vec<(Point, Vec<f64>)>> {
    let width = rows.first().map_or(0, |r| r.1.len());
    let mut out = Vec::with_capacity(rows.len());
    for (line, mut v) in rows {
        if v.len() != width {
            return Err(LabError::Parse {
                line,
                message: format!("expected {width} columns, found {}", v.len()),
            });
        }
        if width < extra + 3 {
            return Err(LabError::Parse {
                line,
                message: format!("need at least 3 coordinates and {extra} value column(s)"),
            });
        }
        let tail = v.split_off(width - extra);
        if !v.iter().chain(&tail).all(|x| x.is_finite()) {
            return Err(LabError::Parse {
                line,
                message: "non-finite value".into(),
            });
        }
        out.push((Point::new(v), tail));
    }
    Ok(out)
}

/// Rows `x1,...,xn,weight,r_eff`.
pub fn write_measure_csv(mu: &DiscreteMeasure, out: impl Write) -> Result<()> {
    let n = mu.points().first().map_or(3, Point::dim);
    let mut w = csv::Writer::from_writer(out);
    let mut header = coord_header(n);
    header.push("weight".into());
    header.push("r_eff".into());
    w.write_record(&header)?;
    for ((p, wt), cell) in mu.points().iter().zip(mu.weights()).zip(mu.cells()) {
        let mut row: Vec<String> = p.coords().iter().map(f64::to_string).collect();
        row.push(wt.to_string());
        row.push(cell.effective_radius().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_measure_csv`]; every atom becomes a volume cell of
/// radius `r_eff`.
pub fn read_measure_csv(input: impl Read) -> Result<DiscreteMeasure> {
    let rows = split_rows(numeric_rows(input)?, 2)?;
    let mut points = Vec::with_capacity(rows.len());
    let mut weights = Vec::with_capacity(rows.len());
    let mut cells = Vec::with_capacity(rows.len());
    for (p, t) in rows {
        points.push(p);
        weights.push(t[0]);
        cells.push(Cell::Ball { radius: t[1] });
    }
    DiscreteMeasure::new(points, weights, cells)
}

/// Rows `x1,...,xn,cell_radius` into a point-cloud shape.
pub fn read_point_cloud_csv(input: impl Read) -> Result<ShapeSpec> {
    let rows = split_rows(numeric_rows(input)?, 1)?;
    let (points, cell_radii): (Vec<Point>, Vec<f64>) =
        rows.into_iter().map(|(p, t)| (p, t[0])).unzip();
    let shape = ShapeSpec::PointCloud { points, cell_radii };
    shape.validate()?;
    Ok(shape)
}

pub fn write_point_cloud_csv(points: &[Point], cell_radii: &[f64], out: impl Write) -> Result<()> {
    if points.len() != cell_radii.len() {
        return Err(LabError::Mismatch("one radius per point".into()));
    }
    let n = points.first().map_or(3, Point::dim);
    let mut w = csv::Writer::from_writer(out);
    let mut header = coord_header(n);
    header.push("cell_radius".into());
    w.write_record(&header)?;
    for (p, r) in points.iter().zip(cell_radii) {
        let mut row: Vec<String> = p.coords().iter().map(f64::to_string).collect();
        row.push(r.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `x1,...,xn`, e.g. recorded hit locations.
pub fn write_points_csv(points: &[Point], out: impl Write) -> Result<()> {
    let n = points.first().map_or(3, Point::dim);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(coord_header(n))?;
    for p in points {
        w.write_record(p.coords().iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_round_trip() {
        let mu = DiscreteMeasure::new(
            vec![
                Point::from([1.0, 2.0, 3.0]),
                Point::from([-0.5, 0.25, 1e-7]),
            ],
            vec![0.125, 3.0],
            vec![Cell::Ball { radius: 0.1 }, Cell::Ball { radius: 0.2 }],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_measure_csv(&mu, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,x3,weight,r_eff\n"));
        let back = read_measure_csv(buf.as_slice()).unwrap();
        assert_eq!(back, mu);
    }

    #[test]
    fn headerless_point_cloud() {
        let shape = read_point_cloud_csv("0,0,0,0.1\n1,0,0,0.2\n".as_bytes()).unwrap();
        let ShapeSpec::PointCloud { points, cell_radii } = shape else {
            panic!("expected a point cloud")
        };
        assert_eq!(points.len(), 2);
        assert_eq!(cell_radii, vec![0.1, 0.2]);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = read_point_cloud_csv("x1,x2,x3,cell_radius\n0,0,0,0.1\n1,0,zz,0.2\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, LabError::Parse { line: 3, .. }), "{err:?}");
        let err = read_point_cloud_csv("0,0,0,0.1\n1,0,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LabError::Parse { line: 2, .. }), "{err:?}");
        assert!(read_point_cloud_csv("0,0,0,-1\n".as_bytes()).is_err());
    }
}
