//! One-hot encoding of raw categorical logs.
//!
//! Every row of a delimited file becomes one positive instance with one
//! active feature per selected column. Columns are laid out in the order
//! given; within a column, distinct values are ranked by byte order so the
//! encoding does not depend on row order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::ops::Range;

use crate::data::{Dataset, SparseInstance};
use crate::error::{Error, Result};

/// Which columns of a raw log to encode and which one holds the item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSchema {
    pub delimiter: u8,
    pub has_header: bool,
    /// Header names (or zero-based positions when there is no header).
    pub columns: Vec<String>,
    pub item_column: String,
}

impl RawSchema {
    /// `frappe.csv`: tab separated with header
    /// `user item cnt daytime weekday isweekend homework cost weather country city`.
    /// `cnt` is not a feature.
    pub fn frappe() -> Self {
        Self {
            delimiter: b'\t',
            has_header: true,
            columns: [
                "user",
                "item",
                "daytime",
                "weekday",
                "isweekend",
                "homework",
                "cost",
                "weather",
                "country",
                "city",
            ]
            .map(String::from)
            .to_vec(),
            item_column: "item".into(),
        }
    }

    /// MovieLens `tags.csv`: `userId,movieId,tag,timestamp`; the tag is the item.
    pub fn movielens_tags() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
            columns: ["userId", "movieId", "tag"].map(String::from).to_vec(),
            item_column: "tag".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub name: String,
    pub offset: usize,
    pub cardinality: usize,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub positives: Dataset,
    pub fields: Vec<Field>,
    pub item_field: Range<usize>,
}

pub fn encode_categorical<R: Read>(reader: R, schema: &RawSchema) -> Result<Encoded> {
    let item_pos = schema
        .columns
        .iter()
        .position(|c| *c == schema.item_column)
        .ok_or_else(|| {
            Error::Encode(format!(
                "item column {:?} is not among the encoded columns",
                schema.item_column
            ))
        })?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.has_header)
        .flexible(false)
        .from_reader(reader);

    let positions: Vec<usize> = if schema.has_header {
        let headers = rdr
            .headers()
            .map_err(|e| Error::Encode(e.to_string()))?
            .clone();
        schema
            .columns
            .iter()
            .map(|c| {
                headers
                    .iter()
                    .position(|h| h.trim() == c)
                    .ok_or_else(|| Error::Encode(format!("column {c:?} not in header {headers:?}")))
            })
            .collect::<Result<_>>()?
    } else {
        schema
            .columns
            .iter()
            .map(|c| {
                c.parse()
                    .map_err(|_| Error::Encode(format!("column {c:?} is not a position")))
            })
            .collect::<Result<_>>()?
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut distinct: Vec<BTreeSet<String>> = vec![BTreeSet::new(); positions.len()];
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Encode(format!("row {}: {e}", line + 1)))?;
        let mut row = Vec::with_capacity(positions.len());
        for (slot, &p) in positions.iter().enumerate() {
            let v = record
                .get(p)
                .ok_or_else(|| Error::Encode(format!("row {}: missing column {p}", line + 1)))?
                .trim()
                .to_string();
            distinct[slot].insert(v.clone());
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut fields = Vec::with_capacity(positions.len());
    let mut lookup: Vec<BTreeMap<String, usize>> = Vec::with_capacity(positions.len());
    let mut offset = 0;
    for (name, values) in schema.columns.iter().zip(distinct) {
        fields.push(Field {
            name: name.clone(),
            offset,
            cardinality: values.len(),
        });
        lookup.push(
            values
                .into_iter()
                .enumerate()
                .map(|(r, v)| (v, offset + r))
                .collect(),
        );
        offset += fields.last().map_or(0, |f| f.cardinality);
    }

    let instances = rows
        .iter()
        .map(|row| {
            let idx: Vec<usize> = row.iter().zip(&lookup).map(|(v, m)| m[v]).collect();
            SparseInstance::one_hot(&idx, 1.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let item = &fields[item_pos];
    let item_field = item.offset..item.offset + item.cardinality;
    Ok(Encoded {
        positives: Dataset::new(instances, offset)?,
        fields,
        item_field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_frappe_layout() {
        let raw = "user\titem\tcnt\tdaytime\tweekday\tisweekend\thomework\tcost\tweather\tcountry\tcity\n\
                   0\t5\t3\tmorning\tsunday\tweekend\tunknown\tfree\tsunny\tSpain\t10\n\
                   1\t2\t1\tevening\tmonday\tworkday\thome\tpaid\tcloudy\tSpain\t10\n";
        let enc = encode_categorical(raw.as_bytes(), &RawSchema::frappe()).unwrap();
        assert_eq!(enc.positives.len(), 2);
        assert_eq!(enc.fields.len(), 10);
        // user: 2 values, item: 2 values
        assert_eq!(enc.item_field, 2..4);
        let x = &enc.positives.instances()[0];
        assert_eq!(x.nnz(), 10);
        // item "5" ranks after "2"
        assert_eq!(x.indices()[1], 3);
        // country and city share a single value
        assert_eq!(
            enc.positives.num_features(),
            2 + 2 + 2 + 2 + 2 + 2 + 2 + 2 + 1 + 1
        );
    }

    #[test]
    fn missing_column_is_an_error() {
        let raw = "a,b\n1,2\n";
        let schema = RawSchema {
            delimiter: b',',
            has_header: true,
            columns: vec!["a".into(), "z".into()],
            item_column: "a".into(),
        };
        assert!(encode_categorical(raw.as_bytes(), &schema).is_err());
    }

    #[test]
    fn positional_columns_without_header() {
        let raw = "u1,m1,t1\nu2,m1,t2\n";
        let schema = RawSchema {
            delimiter: b',',
            has_header: false,
            columns: vec!["0".into(), "2".into()],
            item_column: "2".into(),
        };
        let enc = encode_categorical(raw.as_bytes(), &schema).unwrap();
        assert_eq!(enc.item_field, 2..4);
        assert_eq!(enc.positives.instances()[1].indices(), &[1, 3]);
    }
}
