//! Run configuration: every tolerance and threshold in one place, overridable
//! from a flat `key = value` text file and embedded in reports verbatim.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Admissibility floor for M = min_{k != 0,1} d_k.
    pub m_min: f64,
    /// Admissibility ceiling for S = sum 1/(1 + d_k).
    pub s_max: f64,
    /// Line window is [-window_k, window_k + 1].
    pub window_k: i64,

    /// Integrator step bound: dt <= dt_safety / (1 + sup sum_j |v^j|).
    pub dt_safety: f64,
    /// Relative boundary-mass ceiling before LeakExceeded.
    pub leak_tolerance: f64,
    /// Relative mass growth over the running minimum before BlowUp.
    pub blowup_tolerance: f64,
    /// Amplitudes below this are flushed to exact zero.
    pub flush_threshold: f64,

    /// Stage-1 feedback gain (2^8 in the construction).
    pub gain: f64,
    /// Stage-1 open-loop time (2^-10 in the construction).
    pub switch_time: f64,
    /// |z^0| or |z^1| at or below this implements the zero convention.
    pub zero_tolerance: f64,
    /// |z^0| must end the feedback segment at or below this.
    pub stage1_tolerance: f64,

    /// Off-mode ratio required before the dyadic controller starts.
    pub eps_start_max: f64,
    /// Dyadic iteration stops when the off-mode ratio falls below this.
    pub eps_converged: f64,
    /// Hard cap on dyadic iterations.
    pub max_dyadic_steps: usize,
    /// Uphill wait cap is tau_max_factor / M.
    pub tau_max_factor: f64,
    /// Largest line index carrying Newton controls.
    pub k_max_cap: i64,
    /// Tail-mass fraction (of eps^2) ignored when choosing k_max.
    pub newton_tail_fraction: f64,

    /// Downhill push: eta * tau = push_budget, tau capped below.
    pub push_budget: f64,
    pub push_tau_cap: f64,
    /// Minimum |z^1| after the push.
    pub rho_min: f64,
    /// Cap on the downhill wait.
    pub sigma_max: f64,

    /// Fourth coordinate for 4D plans.
    pub p: i64,
    /// L-infinity radius of the full-lattice oracle box.
    pub oracle_box: i64,
    /// Sample stride for CSV/report decay series.
    pub sample_stride: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            m_min: 64.0,
            s_max: 6.0,
            window_k: 48,
            dt_safety: 1.0 / 64.0,
            leak_tolerance: 1e-10,
            blowup_tolerance: 1e-8,
            flush_threshold: 1e-280,
            gain: 256.0,
            switch_time: 1.0 / 1024.0,
            zero_tolerance: 1e-6,
            stage1_tolerance: 1e-3,
            eps_start_max: 1e-4,
            eps_converged: 1e-12,
            max_dyadic_steps: 40,
            tau_max_factor: 64.0,
            k_max_cap: 48,
            newton_tail_fraction: 1e-3,
            push_budget: 0.01,
            push_tau_cap: 0.1,
            rho_min: 1e-10,
            sigma_max: 48.0,
            p: 10,
            oracle_box: 96,
            sample_stride: 16,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

impl Config {
    pub fn window(&self) -> (i64, i64) {
        (-self.window_k, self.window_k + 1)
    }

    /// Parse a flat `key = value` file; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, '=');
            let key = parts.next().unwrap_or("").trim();
            let value = parts
                .next()
                .ok_or_else(|| ConfigError {
                    line: idx + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                })?
                .trim();
            cfg.set(key, value).map_err(|message| ConfigError {
                line: idx + 1,
                message,
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Config, Box<dyn std::error::Error>> {
        let text = std::fs::read_to_string(path)?;
        Ok(Config::parse(&text)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn f(value: &str) -> Result<f64, String> {
            value
                .parse::<f64>()
                .map_err(|_| format!("expected a number, got `{value}`"))
        }
        fn i(value: &str) -> Result<i64, String> {
            value
                .parse::<i64>()
                .map_err(|_| format!("expected an integer, got `{value}`"))
        }
        match key {
            "m_min" => self.m_min = f(value)?,
            "s_max" => self.s_max = f(value)?,
            "window_k" => self.window_k = i(value)?,
            "dt_safety" => self.dt_safety = f(value)?,
            "leak_tolerance" => self.leak_tolerance = f(value)?,
            "blowup_tolerance" => self.blowup_tolerance = f(value)?,
            "flush_threshold" => self.flush_threshold = f(value)?,
            "gain" => self.gain = f(value)?,
            "switch_time" => self.switch_time = f(value)?,
            "zero_tolerance" => self.zero_tolerance = f(value)?,
            "stage1_tolerance" => self.stage1_tolerance = f(value)?,
            "eps_start_max" => self.eps_start_max = f(value)?,
            "eps_converged" => self.eps_converged = f(value)?,
            "max_dyadic_steps" => self.max_dyadic_steps = i(value)? as usize,
            "tau_max_factor" => self.tau_max_factor = f(value)?,
            "k_max_cap" => self.k_max_cap = i(value)?,
            "newton_tail_fraction" => self.newton_tail_fraction = f(value)?,
            "push_budget" => self.push_budget = f(value)?,
            "push_tau_cap" => self.push_tau_cap = f(value)?,
            "rho_min" => self.rho_min = f(value)?,
            "sigma_max" => self.sigma_max = f(value)?,
            "p" => self.p = i(value)?,
            "oracle_box" => self.oracle_box = i(value)?,
            "sample_stride" => self.sample_stride = i(value)? as usize,
            _ => return Err(format!("unknown configuration key `{key}`")),
        }
        Ok(())
    }
}
