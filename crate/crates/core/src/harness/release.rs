use nalgebra::Vector3;

use super::config::ReleaseConfig;

/// Free-fall detector on the accelerometer magnitude.
#[derive(Debug, Clone)]
pub struct ReleaseDetector {
    threshold: f64,
    needed: usize,
    dt: f64,
    run: usize,
    fired_at: Option<f64>,
}

impl ReleaseDetector {
    pub fn new(cfg: &ReleaseConfig, dt: f64) -> Self {
        Self {
            threshold: cfg.threshold,
            needed: (cfg.duration / dt).round().max(1.0) as usize,
            dt,
            run: 0,
            fired_at: None,
        }
    }

    /// Feed one sample taken at `time`. Returns the detection time on the
    /// tick the detector fires.
    pub fn step(&mut self, specific_force: &Vector3<f64>, time: f64) -> Option<f64> {
        if self.fired_at.is_some() {
            return None;
        }
        if specific_force.norm() < self.threshold {
            self.run += 1;
        } else {
            self.run = 0;
        }
        if self.run > self.needed {
            self.fired_at = Some(time);
            return Some(time);
        }
        None
    }

    pub fn fired_at(&self) -> Option<f64> {
        self.fired_at
    }

    /// Time of the first sample of the run that triggered detection.
    pub fn estimated_release(&self) -> Option<f64> {
        self.fired_at.map(|t| t - self.needed as f64 * self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_rest_never_fires() {
        let mut d = ReleaseDetector::new(&ReleaseConfig::default(), 0.0005);
        for k in 0..10_000 {
            assert!(d.step(&Vector3::new(0.0, 0.0, -9.81), k as f64 * 0.0005).is_none());
        }
    }

    #[test]
    fn fires_after_duration_of_free_fall() {
        let dt = 0.0005;
        let mut d = ReleaseDetector::new(&ReleaseConfig::default(), dt);
        let mut fired = None;
        for k in 0..1000 {
            let t = k as f64 * dt;
            let f = if k < 200 {
                Vector3::new(0.0, 0.0, -9.81)
            } else {
                Vector3::zeros()
            };
            if let Some(tf) = d.step(&f, t) {
                fired = Some(tf);
            }
        }
        let release = 200.0 * dt;
        let tf = fired.unwrap();
        assert!((tf - release - 0.05).abs() < 1e-9, "{tf}");
        assert!((d.estimated_release().unwrap() - release).abs() < 1e-9);
    }

    #[test]
    fn interrupted_run_restarts() {
        let dt = 0.0005;
        let mut d = ReleaseDetector::new(&ReleaseConfig::default(), dt);
        for k in 0..90 {
            assert!(d.step(&Vector3::zeros(), k as f64 * dt).is_none());
        }
        assert!(d.step(&Vector3::new(0.0, 0.0, -9.81), 0.045).is_none());
        for k in 0..100 {
            assert!(d.step(&Vector3::zeros(), 0.0455 + k as f64 * dt).is_none());
        }
        assert!(d.step(&Vector3::zeros(), 0.0955).is_some());
    }
}
