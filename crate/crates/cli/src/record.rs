//! Run records and their CSV serialization.
//!
//! Fixed column set: `model,n,p,k,eta,option,seed,method,loss,mse,
//! mse_l1..mse_l<k>,ane,upset,cycle,runtime_s`. Optional metrics render as
//! empty fields. Wall-clock timing is opt-in so reruns stay byte-identical.

use std::io::Write;

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub model: String,
    pub n: usize,
    pub p: f64,
    pub k: usize,
    pub eta: f64,
    pub option: u32,
    pub seed: u64,
    pub method: String,
    pub loss: String,
    pub mse: Option<f64>,
    pub per_set_mse: Vec<f64>,
    pub ane: Option<f64>,
    pub upset: Option<f64>,
    pub cycle: Option<f64>,
    pub runtime_s: Option<f64>,
}

impl RunRecord {
    pub fn is_finite(&self) -> bool {
        self.mse.iter().all(|v| v.is_finite())
            && self.per_set_mse.iter().all(|v| v.is_finite())
            && self.ane.iter().all(|v| v.is_finite())
            && self.upset.iter().all(|v| v.is_finite())
            && self.cycle.iter().all(|v| v.is_finite())
    }
}

pub fn csv_header(k_max: usize) -> String {
    let mut cols = vec![
        "model".to_string(),
        "n".into(),
        "p".into(),
        "k".into(),
        "eta".into(),
        "option".into(),
        "seed".into(),
        "method".into(),
        "loss".into(),
        "mse".into(),
    ];
    for l in  1..=k_max {
        cols.push(format!("mse_l{l}"));
    }
    cols.extend(["ane".into(), "upset".into(), "cycle".into(), "runtime_s".into()]);
    cols.join(",")
}

fn metric(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn csv_row(r: &RunRecord, k_max: usize) -> String {
    let mut fields = vec![
        r.model.clone(),
        r.n.to_string(),
        r.p.to_string(),
        r.k.to_string(),
        r.eta.to_string(),
        r.option.to_string(),
        r.seed.to_string(),
        r.method.clone(),
        r.loss.clone(),
        metric(r.mse),
    ];
    for l in 0..k_max {
        fields.push(metric(r.per_set_mse.get(l).copied()));
    }
    fields.push(metric(r.ane));
    fields.push(metric(r.upset));
    fields.push(metric(r.cycle));
    fields.push(r.runtime_s.map(|t| format!("{t:.3}")).unwrap_or_else(|| "0.000".into()));
    fields.join(",")
}

pub fn write_csv(path: &std::path::Path, records: &[RunRecord]) -> std::io::Result<()> {
    let k_max = records.iter().map(|r| r.k).max().unwrap_or(1);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", csv_header(k_max))?;
    for r in records {
        writeln!(w, "{}", csv_row(r, k_max))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_row_align() {
        let r = RunRecord {
            model: "ero".into(),
            n: 10,
            p: 0.5,
            k: 2,
            eta: 0.1,
            option: 1,
            seed: 3,
            method: "spectral".into(),
            loss: String::new(),
            mse: Some(0.125),
            per_set_mse: vec![0.1, 0.15],
            ane: None,
            upset: Some(0.01),
            cycle: None,
            runtime_s: None,
        };
        let header = csv_header(2);
        let row = csv_row(&r, 2);
        assert_eq!(header.split(',').count(), row.split(',').count());
        assert!(row.starts_with("ero,10,0.5,2,0.1,1,3,spectral,,0.125000,0.100000,0.150000,"));
        assert!(row.ends_with("0.000"));
        assert!(r.is_finite());
    }
}
