//! Ethernet / IPv4 / TCP / UDP / ICMP header parsing and payload stripping.
//!
//! Only network and transport headers may be kept, so every record is cut
//! to its snap length: the L2 header (with at most one VLAN tag), the full
//! IPv4 header including options, and the full L4 header including TCP
//! options. Frames that are not IPv4 keep only the L2 header.

use std::net::Ipv4Addr;

use thiserror::Error;

use crate::formats::erf::TraceRecord;

pub const ETH_HEADER_LEN: usize = 14;
pub const VLAN_TAG_LEN: usize = 4;
pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;
pub const ETHERTYPE_VLAN: u16 = 0x8100;

pub const IPPROTO_ICMP: u8 = 1;
pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

const UDP_HEADER_LEN: usize = 8;
const ICMP_HEADER_LEN: usize = 8;

/// How far header parsing got.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum Layer {
    #[default]
    Link,
    Network,
    Transport,
}

/// Parsed header fields of one frame.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct HeaderSummary {
    /// Ethertype after any VLAN tag.
    pub ethertype: u16,
    pub vlan_id: Option<u16>,
    /// 14, or 18 with a VLAN tag.
    pub l2_len: usize,
    pub src_ip: Option<Ipv4Addr>,
    pub dst_ip: Option<Ipv4Addr>,
    pub protocol: Option<u8>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    /// 0 when no IPv4 header is present.
    pub ip_header_len: usize,
    pub l4_header_len: usize,
    pub tcp_flags: Option<u8>,
    /// Non-first IPv4 fragment: no transport header follows.
    pub fragment: bool,
    pub snap_len: usize,
    pub depth: Layer,
}

impl HeaderSummary {
    /// Offset of the IPv4 header, when there is one.
    pub fn ip_offset(&self) -> Option<usize> {
        self.src_ip.map(|_| self.l2_len)
    }

    pub fn is_ipv4(&self) -> bool {
        self.src_ip.is_some()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeaderError {
    #[error("frame of {0} bytes is shorter than an Ethernet header")]
    FrameTooShort(usize),
    /// A header declares more bytes than the frame holds. The summary
    /// covers the layers that did parse; its snap length is the whole frame
    /// because every remaining byte belongs to the declared header.
    #[error("truncated {layer:?} header")]
    TruncatedLayer {
        layer: Layer,
        partial: Box<HeaderSummary>,
    },
}

/// Snap length rule: L2 header, plus the IPv4 header, plus the transport
/// header for TCP, UDP and ICMP (ICMP counts as 8 bytes).
pub fn snap_length(s: &HeaderSummary) -> usize {
    s.l2_len + s.ip_header_len + s.l4_header_len
}

pub fn parse_headers(frame: &[u8]) -> Result<HeaderSummary, HeaderError> {
    if frame.len() < ETH_HEADER_LEN {
        return Err(HeaderError::FrameTooShort(frame.len()));
    }
    let mut s = HeaderSummary {
        l2_len: ETH_HEADER_LEN,
        ethertype: be16(frame, 12),
        ..Default::default()
    };
    if s.ethertype == ETHERTYPE_VLAN {
        if frame.len() < ETH_HEADER_LEN + VLAN_TAG_LEN {
            s.snap_len = frame.len();
            return Err(truncated(Layer::Link, s));
        }
        s.vlan_id = Some(be16(frame, 14) & 0x0fff);
        s.ethertype = be16(frame, 16);
        s.l2_len += VLAN_TAG_LEN;
    }
    s.snap_len = s.l2_len;
    if s.ethertype != ETHERTYPE_IPV4 {
        return Ok(s);
    }

    let ip = &frame[s.l2_len..];
    if ip.is_empty() || ip[0] >> 4 != 4 {
        // not really IPv4; keep L2 only
        return Ok(s);
    }
    let ihl = (ip[0] & 0x0f) as usize * 4;
    if ihl < 20 {
        return Ok(s);
    }
    if ip.len() < 20 {
        s.snap_len = frame.len();
        return Err(truncated(Layer::Network, s));
    }
    s.protocol = Some(ip[9]);
    s.src_ip = Some(Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]));
    s.dst_ip = Some(Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]));
    s.ip_header_len = ihl;
    s.depth = Layer::Network;
    if ip.len() < ihl {
        s.snap_len = frame.len();
        return Err(truncated(Layer::Network, s));
    }
    s.snap_len = snap_length(&s);
    let frag_offset = be16(ip, 6) & 0x1fff;
    if frag_offset != 0 {
        s.fragment = true;
        return Ok(s);
    }

    let l4 = &ip[ihl..];
    let proto = ip[9];
    let l4_len = match proto {
        IPPROTO_TCP => {
            if l4.len() < 13 {
                s.snap_len = frame.len();
                return Err(truncated(Layer::Transport, s));
            }
            let off = (l4[12] >> 4) as usize * 4;
            if off < 20 {
                // bogus data offset; the IP header is all we can vouch for
                return Ok(s);
            }
            s.src_port = Some(be16(l4, 0));
            s.dst_port = Some(be16(l4, 2));
            if l4.len() < off {
                s.snap_len = frame.len();
                return Err(truncated(Layer::Transport, s));
            }
            s.tcp_flags = Some(l4[13]);
            off
        }
        IPPROTO_UDP => {
            if l4.len() < UDP_HEADER_LEN {
                s.snap_len = frame.len();
                return Err(truncated(Layer::Transport, s));
            }
            s.src_port = Some(be16(l4, 0));
            s.dst_port = Some(be16(l4, 2));
            UDP_HEADER_LEN
        }
        IPPROTO_ICMP => {
            if l4.len() < ICMP_HEADER_LEN {
                s.snap_len = frame.len();
                return Err(truncated(Layer::Transport, s));
            }
            ICMP_HEADER_LEN
        }
        _ => return Ok(s),
    };
    s.l4_header_len = l4_len;
    s.depth = Layer::Transport;
    s.snap_len = snap_length(&s);
    Ok(s)
}

fn truncated(layer: Layer, partial: HeaderSummary) -> HeaderError {
    HeaderError::TruncatedLayer {
        layer,
        partial: Box::new(partial),
    }
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

/// Cut a record's frame to its snap length. `wlen` is untouched.
///
/// A frame whose declared headers run past its end is kept whole (all of
/// its bytes are header). Frames shorter than an Ethernet header are
/// returned as an error and left to the caller.
pub fn strip_payload(rec: &mut TraceRecord) -> Result<usize, HeaderError> {
    let snap = match parse_headers(&rec.frame) {
        Ok(s) => s.snap_len,
        Err(HeaderError::TruncatedLayer { partial, .. }) => partial.snap_len,
        Err(e) => return Err(e),
    };
    let removed = rec.frame.len().saturating_sub(snap);
    rec.frame.truncate(snap);
    Ok(removed)
}

/// Test and demo helpers for building frames.
pub mod build {
    use super::*;

    /// Ethernet + IPv4 header (no payload). `l4` is appended verbatim and
    /// counted in the IPv4 total length together with `payload_len`.
    pub fn ipv4_frame(
        src: Ipv4Addr,
        dst: Ipv4Addr,
        protocol: u8,
        ip_options: &[u8],
        l4: &[u8],
        payload: &[u8],
    ) -> Vec<u8> {
        assert!(ip_options.len().is_multiple_of(4) && ip_options.len() <= 40);
        let ihl = 20 + ip_options.len();
        let total = ihl + l4.len() + payload.len();
        let mut f = Vec::with_capacity(ETH_HEADER_LEN + total);
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 1]);
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 2]);
        f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
        f.push(0x40 | (ihl / 4) as u8);
        f.push(0);
        f.extend_from_slice(&(total.min(u16::MAX as usize) as u16).to_be_bytes());
        f.extend_from_slice(&[0, 0, 0x40, 0]);
        f.push(64);
        f.push(protocol);
        f.extend_from_slice(&[0, 0]);
        f.extend_from_slice(&src.octets());
        f.extend_from_slice(&dst.octets());
        f.extend_from_slice(ip_options);
        let csum = crate::anon::ipv4_checksum(&f[ETH_HEADER_LEN..ETH_HEADER_LEN + ihl]);
        f[ETH_HEADER_LEN + 10..ETH_HEADER_LEN + 12].copy_from_slice(&csum.to_be_bytes());
        f.extend_from_slice(l4);
        f.extend_from_slice(payload);
        f
    }

    pub fn tcp_header(sport: u16, dport: u16, flags: u8, options: &[u8]) -> Vec<u8> {
        assert!(options.len().is_multiple_of(4) && options.len() <= 40);
        let mut h = Vec::with_capacity(20 + options.len());
        h.extend_from_slice(&sport.to_be_bytes());
        h.extend_from_slice(&dport.to_be_bytes());
        h.extend_from_slice(&[0, 0, 0, 1, 0, 0, 0, 0]);
        h.push((((20 + options.len()) / 4) as u8) << 4);
        h.push(flags);
        h.extend_from_slice(&[0xff, 0xff, 0, 0, 0, 0]);
        h.extend_from_slice(options);
        h
    }

    pub fn udp_header(sport: u16, dport: u16, payload_len: usize) -> Vec<u8> {
        let mut h = Vec::with_capacity(8);
        h.extend_from_slice(&sport.to_be_bytes());
        h.extend_from_slice(&dport.to_be_bytes());
        h.extend_from_slice(&((8 + payload_len).min(u16::MAX as usize) as u16).to_be_bytes());
        h.extend_from_slice(&[0, 0]);
        h
    }

    pub fn icmp_echo() -> Vec<u8> {
        vec![8, 0, 0, 0, 0, 1, 0, 1]
    }
}
