//! Serializers for float fields that may hold infinite thresholds.

use serde::ser::SerializeSeq;
use serde::Serializer;

pub fn scalar<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if *x == f64::INFINITY {
        s.serialize_str("inf")
    } else if *x == f64::NEG_INFINITY {
        s.serialize_str("-inf")
    } else if x.is_nan() {
        s.serialize_none()
    } else {
        s.serialize_f64(*x)
    }
}

pub fn vec<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    struct Item(f64);
    impl serde::Serialize for Item {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            scalar(&self.0, s)
        }
    }
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&Item(*x))?;
    }
    seq.end()
}
