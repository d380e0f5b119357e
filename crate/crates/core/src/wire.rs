//! Monitoring packet data model and its canonical JSON encoding.
//!
//! Encoding is canonical: keys in the fixed order `type, parent, source,
//! destination, gateway, timeout, timestamp, query | aggregate`, no
//! whitespace, absent bodies omitted. Decoding accepts any key order and
//! whitespace.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::aggregation::{AggState, MonitorFunction};

/// Maximum number of ancestors carried in a query's relay set.
pub const MAX_RELAY_SET: usize = 3;

/// IPv4 node address. Ordered lexicographically on octets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(Ipv4Addr);

impl Address {
    pub const fn new(a: u8, b: u8, c: u8, d: u8) -> Self {
        Address(Ipv4Addr::new(a, b, c, d))
    }

    /// Address assigned to simulator node `index`: `10.0.0.1` for index 0.
    pub fn from_index(index: usize) -> Self {
        let host = index + 1;
        assert!(host <= 0xFFFF, "node index {index} out of address range");
        Address::new(10, 0, (host >> 8) as u8, (host & 0xFF) as u8)
    }

    /// Inverse of [`Address::from_index`].
    pub fn index(&self) -> Option<usize> {
        let [a, b, c, d] = self.0.octets();
        if a != 10 || b != 0 {
            return None;
        }
        let host = ((c as usize) << 8) | d as usize;
        host.checked_sub(1)
    }

    pub fn octets(&self) -> [u8; 4] {
        self.0.octets()
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad address {0:?}")]
pub struct AddressParseError(pub String);

impl FromStr for Address {
    type Err = AddressParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Ipv4Addr>()
            .map(Address)
            .map_err(|_| AddressParseError(s.to_string()))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Query identifier: the source address concatenated with its launch time.
///
/// The concatenation is not uniquely splittable (`10.0.0.1` + `15...` and
/// `10.0.0.11` + `5...` collide in form), so the identifier is kept as the
/// opaque wire string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn make_session_id(source: Address, now_unix_ms: u64) -> SessionId {
    SessionId(format!("{source}{now_unix_ms}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketType {
    Query,
    Aggregate,
    AggregateRoute,
    AggregateForward,
}

impl PacketType {
    pub const ALL: [PacketType; 4] = [
        PacketType::Query,
        PacketType::Aggregate,
        PacketType::AggregateRoute,
        PacketType::AggregateForward,
    ];

    pub fn token(self) -> &'static str {
        match self {
            PacketType::Query => "query",
            PacketType::Aggregate => "aggregate",
            PacketType::AggregateRoute => "aggregate_route",
            PacketType::AggregateForward => "aggregate_forward",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        PacketType::ALL.into_iter().find(|t| t.token() == s)
    }

    pub fn carries_aggregate(self) -> bool {
        self != PacketType::Query
    }
}

impl fmt::Display for PacketType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryBody {
    pub function: MonitorFunction,
    #[serde(rename = "relaySet")]
    pub relay_set: Vec<Address>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateBody {
    pub outcome: f64,
    pub observations: u64,
}

impl From<AggState> for AggregateBody {
    fn from(s: AggState) -> Self {
        AggregateBody { outcome: s.outcome, observations: s.observations }
    }
}

impl From<AggregateBody> for AggState {
    fn from(b: AggregateBody) -> Self {
        AggState { outcome: b.outcome, observations: b.observations }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitoringPacket {
    pub kind: PacketType,
    pub parent: Address,
    pub source: Address,
    pub destination: Address,
    pub gateway: Address,
    pub timeout_ms: u64,
    pub timestamp: SessionId,
    pub query: Option<QueryBody>,
    pub aggregate: Option<AggregateBody>,
}

/// Addressing fields shared by every packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub parent: Address,
    pub source: Address,
    pub destination: Address,
    pub gateway: Address,
    pub timeout_ms: u64,
    pub timestamp: SessionId,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PacketError {
    #[error("timeout must be positive")]
    ZeroTimeout,
    #[error("relay set has {0} entries, at most {MAX_RELAY_SET} allowed")]
    RelaySetTooLong(usize),
    #[error("{0} packet must carry exactly the matching body")]
    BodyMismatch(PacketType),
    #[error("aggregate must carry at least one observation")]
    EmptyAggregate,
    #[error("aggregate outcome is not finite")]
    NonFiniteOutcome,
}

impl MonitoringPacket {
    pub fn new_query(header: Header, body: QueryBody) -> Result<Self, PacketError> {
        let p = MonitoringPacket::assemble(PacketType::Query, header, Some(body), None);
        p.validate()?;
        Ok(p)
    }

    pub fn new_aggregate(
        kind: PacketType,
        header: Header,
        body: AggregateBody,
    ) -> Result<Self, PacketError> {
        let p = MonitoringPacket::assemble(kind, header, None, Some(body));
        p.validate()?;
        Ok(p)
    }

    fn assemble(
        kind: PacketType,
        h: Header,
        query: Option<QueryBody>,
        aggregate: Option<AggregateBody>,
    ) -> Self {
        MonitoringPacket {
            kind,
            parent: h.parent,
            source: h.source,
            destination: h.destination,
            gateway: h.gateway,
            timeout_ms: h.timeout_ms,
            timestamp: h.timestamp,
            query,
            aggregate,
        }
    }

    pub fn header(&self) -> Header {
        Header {
            parent: self.parent,
            source: self.source,
            destination: self.destination,
            gateway: self.gateway,
            timeout_ms: self.timeout_ms,
            timestamp: self.timestamp.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), PacketError> {
        if self.timeout_ms == 0 {
            return Err(PacketError::ZeroTimeout);
        }
        match (self.kind, &self.query, &self.aggregate) {
            (PacketType::Query, Some(q), None) => {
                if q.relay_set.len() > MAX_RELAY_SET {
                    return Err(PacketError::RelaySetTooLong(q.relay_set.len()));
                }
            }
            (k, None, Some(a)) if k.carries_aggregate() => {
                if a.observations == 0 {
                    return Err(PacketError::EmptyAggregate);
                }
                if !a.outcome.is_finite() {
                    return Err(PacketError::NonFiniteOutcome);
                }
            }
            (k, _, _) => return Err(PacketError::BodyMismatch(k)),
        }
        Ok(())
    }

    /// Aggregate payload as an accumulator, empty for queries.
    pub fn agg_state(&self) -> AggState {
        self.aggregate.map(AggState::from).unwrap_or_default()
    }
}

#[derive(Serialize)]
struct WireOut<'a> {
    #[serde(rename = "type")]
    kind: PacketType,
    parent: Address,
    source: Address,
    destination: Address,
    gateway: Address,
    timeout: u64,
    timestamp: &'a SessionId,
    #[serde(skip_serializing_if = "Option::is_none")]
    query: Option<&'a QueryBody>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregate: Option<&'a AggregateBody>,
}

pub fn encode_packet(p: &MonitoringPacket) -> Vec<u8> {
    debug_assert!(p.validate().is_ok(), "encoding invalid packet {p:?}");
    let out = WireOut {
        kind: p.kind,
        parent: p.parent,
        source: p.source,
        destination: p.destination,
        gateway: p.gateway,
        timeout: p.timeout_ms,
        timestamp: &p.timestamp,
        query: p.query.as_ref(),
        aggregate: p.aggregate.as_ref(),
    };
    serde_json::to_vec(&out).expect("packet serialization is infallible")
}

/// Length of the canonical encoding in bytes.
pub fn encoded_len(p: &MonitoringPacket) -> usize {
    encode_packet(p).len()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed packet: {0}")]
    Malformed(String),
    #[error("unknown packet type {0:?}")]
    UnknownType(String),
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("packet body does not match its type")]
    BodyMismatch,
    #[error("bad address in field {field:?}: {value:?}")]
    BadAddress { field: &'static str, value: String },
    #[error("timeout must be a positive integer")]
    BadTimeout,
    #[error("invalid value for field {0:?}")]
    InvalidField(&'static str),
}

pub fn decode_packet(bytes: &[u8]) -> Result<MonitoringPacket, DecodeError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| DecodeError::Malformed("top level is not an object".into()))?;

    let kind = match obj.get("type") {
        None => return Err(DecodeError::MissingField("type")),
        Some(Value::String(s)) => {
            PacketType::from_token(s).ok_or_else(|| DecodeError::UnknownType(s.clone()))?
        }
        Some(other) => return Err(DecodeError::UnknownType(other.to_string())),
    };

    let query = obj.get("query");
    let aggregate = obj.get("aggregate");
    let body_ok = match kind {
        PacketType::Query => query.is_some() && aggregate.is_none(),
        _ => aggregate.is_some() && query.is_none(),
    };
    if !body_ok {
        return Err(DecodeError::BodyMismatch);
    }

    let parent = address_field(obj, "parent")?;
    let source = address_field(obj, "source")?;
    let destination = address_field(obj, "destination")?;
    let gateway = address_field(obj, "gateway")?;
    let timeout_ms = match obj.get("timeout") {
        None => return Err(DecodeError::MissingField("timeout")),
        Some(v) => v.as_u64().filter(|t| *t > 0).ok_or(DecodeError::BadTimeout)?,
    };
    let timestamp = match obj.get("timestamp") {
        None => return Err(DecodeError::MissingField("timestamp")),
        Some(Value::String(s)) if !s.is_empty() => SessionId(s.clone()),
        Some(_) => return Err(DecodeError::InvalidField("timestamp")),
    };

    let query = query.map(decode_query).transpose()?;
    let aggregate = aggregate.map(decode_aggregate).transpose()?;

    Ok(MonitoringPacket {
        kind,
        parent,
        source,
        destination,
        gateway,
        timeout_ms,
        timestamp,
        query,
        aggregate,
    })
}

fn address_field(obj: &Map<String, Value>, field: &'static str) -> Result<Address, DecodeError> {
    match obj.get(field) {
        None => Err(DecodeError::MissingField(field)),
        Some(v) => parse_address(v, field),
    }
}

fn parse_address(v: &Value, field: &'static str) -> Result<Address, DecodeError> {
    let s = v.as_str().ok_or_else(|| DecodeError::BadAddress {
        field,
        value: v.to_string(),
    })?;
    s.parse().map_err(|_| DecodeError::BadAddress { field, value: s.to_string() })
}

fn decode_query(v: &Value) -> Result<QueryBody, DecodeError> {
    let obj = v.as_object().ok_or(DecodeError::InvalidField("query"))?;
    let function = match obj.get("function") {
        None => return Err(DecodeError::MissingField("function")),
        Some(f) => f
            .as_str()
            .and_then(|s| s.parse::<MonitorFunction>().ok())
            .ok_or(DecodeError::InvalidField("function"))?,
    };
    let relay_set = match obj.get("relaySet") {
        None => return Err(DecodeError::MissingField("relaySet")),
        Some(Value::Array(items)) => {
            if items.len() > MAX_RELAY_SET {
                return Err(DecodeError::InvalidField("relaySet"));
            }
            items
                .iter()
                .map(|a| parse_address(a, "relaySet"))
                .collect::<Result<Vec<_>, _>>()?
        }
        Some(_) => return Err(DecodeError::InvalidField("relaySet")),
    };
    Ok(QueryBody { function, relay_set })
}

fn decode_aggregate(v: &Value) -> Result<AggregateBody, DecodeError> {
    let obj = v.as_object().ok_or(DecodeError::InvalidField("aggregate"))?;
    let outcome = match obj.get("outcome") {
        None => return Err(DecodeError::MissingField("outcome")),
        Some(o) => o.as_f64().ok_or(DecodeError::InvalidField("outcome"))?,
    };
    let observations = match obj.get("observations") {
        None => return Err(DecodeError::MissingField("observations")),
        Some(o) => o
            .as_u64()
            .filter(|n| *n > 0)
            .ok_or(DecodeError::InvalidField("observations"))?,
    };
    Ok(AggregateBody { outcome, observations })
}
