//! Labeled latent sets and their CSV form (`class,label,coord_0..coord_{d-1}`).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::Latent;

#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub class: usize,
    pub latent: Latent,
}

impl Labeled {
    pub fn new(class: usize, latent: Latent) -> Self {
        Labeled { class, latent }
    }
}

pub fn class_label(class: usize) -> String {
    format!("class_{class}")
}

/// Number of classes implied by the largest label present.
pub fn num_classes(data: &[Labeled]) -> usize {
    data.iter().map(|p| p.class + 1).max().unwrap_or(0)
}

pub fn write_csv<W: Write>(data: &[Labeled], writer: W) -> Result<()> {
    let dim = data.first().map_or(0, |p| p.latent.dim());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["class".to_string(), "label".to_string()];
    header.extend((0..dim).map(|k| format!("coord_{k}")));
    w.write_record(&header)?;
    for p in data {
        let mut row = vec![p.class.to_string(), class_label(p.class)];
        // `{:?}` prints the shortest representation that round-trips exactly.
        row.extend(p.latent.as_slice().iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<Labeled>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("class") || headers.get(1) != Some("label") {
        return Err(Error::Format("labeled CSV must start with `class,label`".into()));
    }
    let dim = headers.len() - 2;
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let class: usize = record[0]
            .parse()
            .map_err(|e| Error::Format(format!("row {}: bad class: {e}", line + 1)))?;
        let coords = (0..dim)
            .map(|k| {
                record[k + 2]
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: bad coordinate: {e}", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Labeled::new(class, Latent::new(coords)?));
    }
    Ok(out)
}
