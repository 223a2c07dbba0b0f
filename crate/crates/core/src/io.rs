//! CSV persistence. Every file starts with `#` comment lines (grid, splice
//! metadata and whatever manifest the caller passes), followed by plain rows.
//! Numbers are written in shortest round-trip form, so output is
//! byte-reproducible.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{BoundaryCondition, Field, Grid, Trajectory};

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

fn write_comments<W: Write>(out: &mut W, lines: &[String]) -> Result<()> {
    for l in lines {
        writeln!(out, "# {l}")?;
    }
    Ok(())
}

fn grid_lines(g: &Grid) -> Vec<String> {
    vec![
        format!("grid.x_min = {}", num(g.x_min())),
        format!("grid.x_max = {}", num(g.x_max())),
        format!("grid.n = {}", g.len()),
        format!("grid.bc = {}", g.bc()),
    ]
}

/// Comment lines of a file, without the leading `# `.
fn split_comments(text: &str) -> (Vec<String>, &str) {
    let mut lines = Vec::new();
    let mut rest = text;
    while let Some(line) = rest.strip_prefix('#') {
        let (l, tail) = line.split_once('\n').unwrap_or((line, ""));
        lines.push(l.trim().to_string());
        rest = tail;
    }
    (lines, rest)
}

fn lookup<'a>(lines: &'a [String], key: &str) -> Option<&'a str> {
    lines.iter().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == key).then(|| v.trim())
    })
}

fn parse_key<T: std::str::FromStr>(lines: &[String], key: &str) -> Result<T> {
    let v = lookup(lines, key).ok_or_else(|| Error::invalid(format!("missing header '{key}'")))?;
    v.parse()
        .map_err(|_| Error::invalid(format!("bad header value {key} = {v}")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("not a number: '{s}'")))
}

/// Rows `t, u(x_0), ..., u(x_{n-1})` after a grid/splice header. The steady
/// state of a spliced trajectory is not stored; readers splice it back in.
pub fn write_trajectory<W: Write>(mut out: W, traj: &Trajectory, header: &[String]) -> Result<()> {
    let mut lines = vec!["rdthreshold trajectory".to_string()];
    lines.extend(grid_lines(traj.grid()));
    if let Some(ts) = traj.splice_time() {
        lines.push(format!("t_splice = {}", num(ts)));
    }
    lines.extend(header.iter().cloned());
    write_comments(&mut out, &lines)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for (t, f) in traj.times().iter().zip(traj.fields()) {
        let row = std::iter::once(num(*t)).chain(f.values().iter().map(|&v| num(v)));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StoredTrajectory {
    /// Unspliced; `t_splice` says where the caller should hand over to `W`.
    pub traj: Trajectory,
    pub t_splice: Option<f64>,
    pub header: Vec<String>,
}

pub fn read_trajectory<R: Read>(mut input: R) -> Result<StoredTrajectory> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let (header, body) = split_comments(&text);
    let grid = Arc::new(Grid::new(
        parse_key(&header, "grid.x_min")?,
        parse_key(&header, "grid.x_max")?,
        parse_key(&header, "grid.n")?,
        parse_key::<BoundaryCondition>(&header, "grid.bc")?,
    )?);
    let t_splice = lookup(&header, "t_splice").map(parse_f64).transpose()?;
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(body.as_bytes());
    let mut times = Vec::new();
    let mut fields = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != grid.len() + 1 {
            return Err(Error::invalid(format!(
                "trajectory row has {} columns, expected {}",
                rec.len(),
                grid.len() + 1
            )));
        }
        times.push(parse_f64(&rec[0])?);
        let vals = rec.iter().skip(1).map(parse_f64).collect::<Result<Vec<_>>>()?;
        fields.push(Field::new(grid.clone(), vals)?);
    }
    Ok(StoredTrajectory {
        traj: Trajectory::from_parts(grid, times, fields)?,
        t_splice,
        header,
    })
}

/// Two columns `x, value`.
pub fn write_field<W: Write>(mut out: W, field: &Field, name: &str, header: &[String]) -> Result<()> {
    let mut lines = grid_lines(field.grid());
    lines.extend(header.iter().cloned());
    write_comments(&mut out, &lines)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", name])?;
    for (i, &v) in field.values().iter().enumerate() {
        w.write_record([num(field.grid().x(i)), num(v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a two-column field and checks that its nodes are those of `grid`.
pub fn read_field<R: Read>(input: R, grid: &Arc<Grid>) -> Result<Field> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut vals = Vec::with_capacity(grid.len());
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::invalid("field CSV needs exactly two columns"));
        }
        let (x, v) = (parse_f64(&rec[0])?, parse_f64(&rec[1])?);
        let i = vals.len();
        if i >= grid.len() || (x - grid.x(i)).abs() > 1e-9 * grid.dx().max(1.0) {
            return Err(Error::invalid(format!("field node {i} at x = {x} does not match the grid")));
        }
        vals.push(v);
    }
    if vals.len() != grid.len() {
        return Err(Error::invalid(format!(
            "field has {} nodes, grid has {}",
            vals.len(),
            grid.len()
        )));
    }
    Field::new(grid.clone(), vals)
}

/// A report: comment header, one row of column names, then rows.
pub fn write_table<W: Write>(mut out: W, header: &[String], columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_comments(&mut out, header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns)?;
    for r in rows {
        if r.len() != columns.len() {
            return Err(Error::Internal(format!(
                "report row has {} cells for {} columns",
                r.len(),
                columns.len()
            )));
        }
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::symmetric(2.0, 9, BoundaryCondition::DirichletZero).unwrap())
    }

    #[test]
    fn trajectory_round_trip() {
        let g = grid();
        let f0 = Field::from_fn(g.clone(), |x| 0.1 * (4.0 - x * x) / 3.0).unwrap();
        let f1 = f0.scaled(1.0 / 3.0);
        let traj = Trajectory::from_parts(g.clone(), vec![0.0, 0.1], vec![f0.clone(), f1.clone()])
            .unwrap()
            .spliced(0.05, f1.clone())
            .unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj, &["note = x".into()]).unwrap();
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back.t_splice, Some(0.05));
        assert_eq!(back.traj.times(), &[0.0]);
        assert_eq!(back.traj.fields()[0].values(), f0.values());
        assert_eq!(**back.traj.grid(), *g);
        assert!(back.header.iter().any(|l| l == "note = x"));
    }

    #[test]
    fn field_round_trip_and_grid_mismatch() {
        let g = grid();
        let f = Field::from_fn(g.clone(), |x| (-x * x).exp() / 7.0).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f, "p", &[]).unwrap();
        let back = read_field(buf.as_slice(), &g).unwrap();
        assert_eq!(back.values(), f.values());
        let other = Arc::new(Grid::symmetric(3.0, 9, BoundaryCondition::DirichletZero).unwrap());
        assert!(read_field(buf.as_slice(), &other).is_err());
    }

    #[test]
    fn table_rejects_ragged_rows() {
        let mut buf = Vec::new();
        assert!(write_table(&mut buf, &[], &["a", "b"], &[vec!["1".into()]]).is_err());
        let mut buf = Vec::new();
        write_table(&mut buf, &["k = v".into()], &["a"], &[vec![num(0.1)]]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# k = v\na\n0.1\n");
    }
}
