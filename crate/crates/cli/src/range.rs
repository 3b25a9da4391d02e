use crate::CliError;

const STEP_EPS: f64 = 1e-9;

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Range(m);
    let number = |s: &str| -> Result<f64, CliError> {
        let v: f64 = s.trim().parse().map_err(|_| bad(format!("{:?} is not a number", s.trim())))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad(format!("{v} is not finite")))
        }
    };

    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(bad(format!("{spec:?}: expected start:stop:step")));
        };
        let (start, stop, step) = (number(start)?, number(stop)?, number(step)?);
        if !(step > 0.0) {
            return Err(bad(format!("step must be positive, got {step}")));
        }
        if stop < start {
            return Err(bad(format!("stop {stop} is below start {start}")));
        }
        let count = ((stop - start) / step + STEP_EPS).floor() as usize + 1;
        Ok((0..count).map(|k| start + k as f64 * step).collect())
    } else {
        let values = spec.split(',').map(number).collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(bad("empty list".into()));
        }
        Ok(values)
    }
}
