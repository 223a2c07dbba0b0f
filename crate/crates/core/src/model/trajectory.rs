use std::borrow::Cow;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Field, Grid};

/// Time-stamped fields, optionally handing over to a steady state at
/// `splice_time`. For `t >= splice_time` the trajectory equals the steady state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: Arc<Grid>,
    times: Vec<f64>,
    fields: Vec<Field>,
    splice_time: Option<f64>,
    steady_state: Option<Field>,
}

impl Trajectory {
    pub fn new(grid: Arc<Grid>) -> Self {
        Trajectory {
            grid,
            times: Vec::new(),
            fields: Vec::new(),
            splice_time: None,
            steady_state: None,
        }
    }

    pub fn from_parts(grid: Arc<Grid>, times: Vec<f64>, fields: Vec<Field>) -> Result<Self> {
        let mut traj = Trajectory::new(grid);
        if times.len() != fields.len() {
            return Err(Error::invalid("trajectory times and fields differ in length"));
        }
        for (t, f) in times.into_iter().zip(fields) {
            traj.push(t, f)?;
        }
        Ok(traj)
    }

    /// A trajectory sitting at `state` for all `t >= 0`.
    pub fn stationary(state: Field) -> Self {
        let grid = state.grid().clone();
        Trajectory {
            grid,
            times: vec![0.0],
            fields: vec![state.clone()],
            splice_time: Some(0.0),
            steady_state: Some(state),
        }
    }

    pub fn push(&mut self, t: f64, field: Field) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::invalid(format!(
                    "trajectory times must increase ({t} after {last})"
                )));
            }
        }
        if field.len() != self.grid.len() {
            return Err(Error::invalid("field does not match the trajectory grid"));
        }
        self.times.push(t);
        self.fields.push(field);
        Ok(())
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> Option<f64> {
        self.times.first().copied()
    }

    pub fn end(&self) -> Option<f64> {
        self.times.last().copied()
    }

    pub fn first(&self) -> Option<&Field> {
        self.fields.first()
    }

    pub fn last(&self) -> Option<&Field> {
        self.fields.last()
    }

    pub fn splice_time(&self) -> Option<f64> {
        self.splice_time
    }

    pub fn steady_state(&self) -> Option<&Field> {
        self.steady_state.as_ref()
    }

    /// Drops stored fields after `t_splice` and hands over to `steady`.
    pub fn spliced(mut self, t_splice: f64, steady: Field) -> Result<Self> {
        if steady.len() != self.grid.len() {
            return Err(Error::invalid("steady state does not match the trajectory grid"));
        }
        let keep = self.times.partition_point(|&t| t <= t_splice);
        if keep == 0 {
            return Err(Error::invalid("splice time precedes the first stored time"));
        }
        self.times.truncate(keep);
        self.fields.truncate(keep);
        self.splice_time = Some(t_splice);
        self.steady_state = Some(steady);
        Ok(self)
    }

    /// Keeps stored times `<= t_end`.
    pub fn truncated(mut self, t_end: f64) -> Self {
        let keep = self.times.partition_point(|&t| t <= t_end).max(1);
        self.times.truncate(keep);
        self.fields.truncate(keep);
        self
    }

    /// State at time `t`: exact at stored times, linear in time between them,
    /// and the steady state from the splice onward.
    pub fn at(&self, t: f64) -> Result<Cow<'_, Field>> {
        let (Some(t0), Some(t1)) = (self.start(), self.end()) else {
            return Err(Error::invalid("empty trajectory"));
        };
        if let (Some(ts), Some(w)) = (self.splice_time, &self.steady_state) {
            if t >= ts {
                return Ok(Cow::Borrowed(w));
            }
        }
        if t < t0 || t > t1 {
            return Err(Error::invalid(format!(
                "t = {t} outside the trajectory range [{t0}, {t1}]"
            )));
        }
        let k = self.times.partition_point(|&s| s <= t);
        let k = k.saturating_sub(1);
        if self.times[k] == t || k + 1 == self.times.len() {
            return Ok(Cow::Borrowed(&self.fields[k]));
        }
        let (ta, tb) = (self.times[k], self.times[k + 1]);
        let s = (t - ta) / (tb - ta);
        let (a, b) = (&self.fields[k], &self.fields[k + 1]);
        let vals = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (1.0 - s) * x + s * y)
            .collect();
        Ok(Cow::Owned(Field::from_raw(self.grid.clone(), vals)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundaryCondition;

    fn g() -> Arc<Grid> {
        Arc::new(Grid::symmetric(1.0, 5, BoundaryCondition::NeumannZero).unwrap())
    }

    #[test]
    fn times_must_increase() {
        let mut tr = Trajectory::new(g());
        tr.push(0.0, Field::zeros(g())).unwrap();
        assert!(tr.push(0.0, Field::zeros(g())).is_err());
    }

    #[test]
    fn interpolates_and_splices() {
        let mut tr = Trajectory::new(g());
        tr.push(0.0, Field::constant(g(), 0.0)).unwrap();
        tr.push(1.0, Field::constant(g(), 1.0)).unwrap();
        tr.push(2.0, Field::constant(g(), 3.0)).unwrap();
        assert_eq!(tr.at(0.25).unwrap().values()[2], 0.25);
        assert_eq!(tr.at(1.0).unwrap().values()[0], 1.0);
        assert!(tr.at(2.5).is_err());
        let w = Field::constant(g(), 7.0);
        let sp = tr.spliced(1.0, w).unwrap();
        assert_eq!(sp.len(), 2);
        assert_eq!(sp.at(50.0).unwrap().values()[1], 7.0);
        assert_eq!(sp.at(1.0).unwrap().values()[1], 7.0);
    }
}
