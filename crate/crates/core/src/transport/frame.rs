//! Wire encoding of a [`Message`].
//!
//! ```text
//! +----------------------+--------+-----------------+
//! | length: u32 (BE)     | tag u8 | payload (length)|
//! +----------------------+--------+-----------------+
//! ```
//!
//! `length` counts payload bytes only. `encode(tag=2, "hi")` is
//! `00 00 00 02 02 68 69`.

use std::io::{self, Read, Write};

use super::{Message, Tag};

pub const HEADER_LEN: usize = 5;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("payload of {0} bytes does not fit a 32-bit length")]
    TooLong(usize),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, FrameError> {
    let len =
        u32::try_from(msg.payload.len()).map_err(|_| FrameError::TooLong(msg.payload.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.push(msg.tag as u8);
    out.extend_from_slice(&msg.payload);
    Ok(out)
}

/// Decodes one frame from the front of `buf`, returning the message and the
/// number of bytes consumed.
pub fn decode(buf: &[u8]) -> Result<(Message, usize), FrameError> {
    if buf.len() < HEADER_LEN {
        return Err(FrameError::Truncated {
            needed: HEADER_LEN,
            have: buf.len(),
        });
    }
    let len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
    let tag = Tag::try_from(buf[4])?;
    let total = HEADER_LEN + len;
    if buf.len() < total {
        return Err(FrameError::Truncated {
            needed: total,
            have: buf.len(),
        });
    }
    let payload = buf[HEADER_LEN..total].to_vec();
    Ok((Message { tag, payload }, total))
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    let bytes = encode(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    w.write_all(&bytes)?;
    w.flush()
}

pub fn read_message<R: Read>(r: &mut R) -> io::Result<Message> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header[..4].try_into().unwrap()) as usize;
    let tag =
        Tag::try_from(header[4]).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Message { tag, payload })
}
