//! Length-prefixed binary framing.

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FLPB";
pub const PROTOCOL_VERSION: u16 = 1;
pub const MAX_PAYLOAD_LEN: u32 = 64 * 1024 * 1024;
/// magic(4) + version(2) + msg_type(2) + payload_len(4).
pub const HEADER_LEN: usize = 12;

/// A frame whose payload has not been interpreted yet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawFrame {
    pub version: u16,
    pub msg_type: u16,
    pub payload: Vec<u8>,
}

/// Serialize one frame.
pub fn encode_raw(version: u16, msg_type: u16, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&msg_type.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Decode one frame from the front of `buf`.
///
/// Returns `Ok(None)` when the buffer holds only a truncated frame (read
/// more bytes); otherwise the frame and the exact byte count consumed.
pub fn decode_raw(buf: &[u8]) -> Result<Option<(RawFrame, usize)>> {
    if buf.len() < HEADER_LEN {
        return Ok(None);
    }
    if buf[0..4] != MAGIC {
        return Err(Error::Protocol(format!("bad frame magic {:?}", &buf[0..4])));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    let msg_type = u16::from_le_bytes([buf[6], buf[7]]);
    let payload_len = u32::from_le_bytes([buf[8], buf[9], buf[10], buf[11]]);
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(Error::Protocol(format!(
            "payload of {payload_len} bytes exceeds the {MAX_PAYLOAD_LEN}-byte cap"
        )));
    }
    let total = HEADER_LEN + payload_len as usize;
    if buf.len() < total {
        return Ok(None);
    }
    let payload = buf[HEADER_LEN..total].to_vec();
    Ok(Some((
        RawFrame {
            version,
            msg_type,
            payload,
        },
        total,
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shutdown_frame_is_twelve_bytes() {
        let bytes = encode_raw(PROTOCOL_VERSION, 6, &[]);
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[0..4], b"FLPB");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 6);
        assert_eq!(
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]),
            0
        );
    }

    #[test]
    fn truncated_frames_ask_for_more_bytes() {
        let bytes = encode_raw(1, 3, &[1, 2, 3, 4]);
        for cut in 0..bytes.len() {
            assert!(decode_raw(&bytes[..cut]).unwrap().is_none(), "cut at {cut}");
        }
        let (frame, used) = decode_raw(&bytes).unwrap().unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(frame.payload, vec![1, 2, 3, 4]);
    }

    #[test]
    fn one_and_a_half_frames_reports_exact_remainder() {
        let first = encode_raw(1, 4, &[9; 10]);
        let second = encode_raw(1, 5, &[7; 6]);
        let mut buf = first.clone();
        buf.extend_from_slice(&second[..second.len() / 2]);
        let (frame, used) = decode_raw(&buf).unwrap().unwrap();
        assert_eq!(frame.msg_type, 4);
        assert_eq!(used, first.len());
        assert_eq!(buf.len() - used, second.len() / 2);
        assert!(decode_raw(&buf[used..]).unwrap().is_none());
    }

    #[test]
    fn bad_magic_and_oversize_are_errors() {
        let mut bytes = encode_raw(1, 1, &[0; 4]);
        bytes[0] = b'X';
        assert!(decode_raw(&bytes).is_err());

        let mut oversize = encode_raw(1, 1, &[]);
        oversize[8..12].copy_from_slice(&(MAX_PAYLOAD_LEN + 1).to_le_bytes());
        assert!(decode_raw(&oversize).is_err());
    }
}
