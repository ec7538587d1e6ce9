use std::io::Write;

use serde::{Deserialize, Serialize};

use super::QualityError;
use crate::extractor::ListingRecord;
use crate::geo::PointQuality;

/// Fields an exclusion criterion can require.
pub const REQUIRABLE: &[&str] = &[
    "rent_net_eur",
    "size_sqm",
    "rooms",
    "year_built",
    "running_costs_eur",
    "energy_class",
    "raw_address",
    "postal_code",
    "coords",
    "dist_center_m",
    "inside_bbox",
];

pub const BUILDING_LEVEL: &str = "building_level_geolocation";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExclusionCriteria {
    /// Checked in order; a record is charged to its first failing criterion.
    pub require: Vec<String>,
    /// Also require a geocoded point with a house number, inside the bbox.
    #[serde(default)]
    pub building_level_geolocation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExclusionLedger {
    /// Non-zero counts in criterion order.
    pub entries: Vec<(String, usize)>,
}

impl ExclusionLedger {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|(_, c)| c).sum()
    }

    pub fn count(&self, criterion: &str) -> usize {
        self.entries.iter().find(|(c, _)| c == criterion).map_or(0, |(_, n)| *n)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), QualityError> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["criterion", "count"]).map_err(QualityError::from)?;
        for (c, n) in &self.entries {
            w.write_record([c.as_str(), &n.to_string()]).map_err(QualityError::from)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn passes(rec: &ListingRecord, criterion: &str) -> bool {
    match criterion {
        "rent_net_eur" => rec.rent_net_eur.is_some(),
        "size_sqm" => rec.size_sqm.is_some(),
        "rooms" => rec.rooms.is_some(),
        "year_built" => rec.year_built.is_some(),
        "running_costs_eur" => rec.running_costs_eur.is_some(),
        "energy_class" => rec.energy_class.is_some(),
        "raw_address" => rec.raw_address.is_some(),
        "postal_code" => rec.postal_code.is_some(),
        "coords" => rec.coords.is_some(),
        "dist_center_m" => rec.dist_center_m.is_some(),
        "inside_bbox" => !rec.outside_bbox,
        BUILDING_LEVEL => {
            rec.coords.is_some_and(|p| p.quality == PointQuality::Geocoded)
                && rec.address.as_ref().is_some_and(|a| a.house_number.is_some())
                && !rec.outside_bbox
        }
        _ => unreachable!("criteria validated"),
    }
}

pub fn apply_exclusions(
    corpus: Vec<ListingRecord>,
    criteria: &ExclusionCriteria,
) -> Result<(Vec<ListingRecord>, ExclusionLedger), QualityError> {
    let mut order: Vec<&str> = Vec::new();
    for c in &criteria.require {
        if !REQUIRABLE.contains(&c.as_str()) {
            return Err(QualityError::UnknownCriterion(c.clone()));
        }
        order.push(c);
    }
    if criteria.building_level_geolocation {
        order.push(BUILDING_LEVEL);
    }
    let mut counts = vec![0usize; order.len()];
    let mut retained = Vec::with_capacity(corpus.len());
    for rec in corpus {
        match order.iter().position(|c| !passes(&rec, c)) {
            Some(i) => counts[i] += 1,
            None => retained.push(rec),
        }
    }
    let entries = order
        .iter()
        .zip(counts)
        .filter(|(_, n)| *n > 0)
        .map(|(c, n)| (c.to_string(), n))
        .collect();
    Ok((retained, ExclusionLedger { entries }))
}
