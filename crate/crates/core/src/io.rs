//! Point-cloud CSV files and JSON helpers.
//!
//! Clouds are CSV with a header of `x,y,z` or `x,y,z,w`, one point per row.
//! Missing weights default to 1. Values are written with 17 significant
//! digits so a save/load round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

/// Parses a cloud from CSV text. Line numbers in errors are 1-based and
/// count the header.
pub fn read_cloud<R: Read>(mut reader: R) -> Result<PointCloud> {
    let mut text = Vec::new();
    reader.read_to_end(&mut text)?;
    // The reader's own line counter lags after blank rows; count from byte offsets.
    let line_at = |pos: Option<&csv::Position>| {
        pos.map(|p| {
            let mut at = (p.byte() as usize).min(text.len());
            // A record's offset can sit on the blank lines that precede it.
            while at < text.len() && matches!(text[at], b'\n' | b'\r') {
                at += 1;
            }
            1 + text[..at].iter().filter(|&&b| b == b'\n').count()
        })
        .unwrap_or(0)
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_slice());
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, &e.to_string()))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    let weighted = match cols.as_slice() {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "w"] => true,
        _ => {
            return Err(parse_err(
                1,
                &format!("expected header x,y,z or x,y,z,w, found {}", cols.join(",")),
            ))
        }
    };
    let width = if weighted { 4 } else { 3 };
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(line_at(e.position()), &e.to_string()))?;
        let line = line_at(rec.position());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(
                line,
                &format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        let mut v = [0.0; 4];
        for (i, field) in rec.iter().enumerate() {
            v[i] = field
                .parse::<f64>()
                .map_err(|_| parse_err(line, &format!("'{field}' is not a number")))?;
            if !v[i].is_finite() {
                return Err(parse_err(line, &format!("non-finite value '{field}'")));
            }
        }
        points.push(Point::new(v[0], v[1], v[2]));
        weights.push(if weighted { v[3] } else { 1.0 });
    }
    PointCloud::new(points, weights)
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

/// Writes `x,y,z` when every weight is 1, `x,y,z,w` otherwise.
pub fn write_cloud<W: Write>(cloud: &PointCloud, writer: W) -> Result<()> {
    let weighted = cloud.weights().iter().any(|&w| w != 1.0);
    let mut w = BufWriter::new(writer);
    writeln!(w, "{}", if weighted { "x,y,z,w" } else { "x,y,z" })?;
    for (p, wt) in cloud.points().iter().zip(cloud.weights()) {
        if weighted {
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", p.x, p.y, p.z, wt)?;
        } else {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", p.x, p.y, p.z)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_cloud(BufReader::new(File::open(path)?))
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write_cloud(cloud, File::create(path)?)
}

/// Pretty-printed JSON file.
pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Plain text file (CSV tables, JSON lines).
pub fn save_text(text: &str, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn round_trip(c: &PointCloud) -> PointCloud {
        let mut buf = Vec::new();
        write_cloud(c, &mut buf).unwrap();
        read_cloud(buf.as_slice()).unwrap()
    }

    #[test]
    fn three_columns_default_weights() {
        let c = read_cloud("x,y,z\n1,2,3\n-0.5, 0.25 ,1e-3\n".as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.weights(), &[1.0, 1.0]);
        assert_eq!(c.points()[1], Point::new(-0.5, 0.25, 1e-3));
    }

    #[test]
    fn four_columns_read_weights() {
        let c = read_cloud("x,y,z,w\n1,2,3,2\n0,0,1,0.5\n".as_bytes()).unwrap();
        assert_eq!(c.weights(), &[2.0, 0.5]);
    }

    #[test]
    fn random_cloud_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point> = (0..1000)
            .map(|_| {
                Point::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() * 1e-7,
                    rng.random::<f64>() * 3e5,
                )
            })
            .collect();
        let ws: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() + 0.1).collect();
        let c = PointCloud::new(pts, ws).unwrap();
        assert_eq!(round_trip(&c), c);
        let unweighted = fixtures::bunny(50, 1).unwrap();
        assert_eq!(round_trip(&unweighted), unweighted);
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let bad = "x,y,z\n1,2,3\n1,oops,3\n";
        match read_cloud(bad.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("oops"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match read_cloud("x,y,z\n1,2,3\n\n4,5\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_cloud("a,b,c\n1,2,3\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_cloud("x,y,z\nnan,0,0\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_file_is_an_invalid_cloud() {
        assert!(matches!(
            read_cloud("x,y,z\n".as_bytes()),
            Err(Error::InvalidCloud(_))
        ));
    }
}
