//! Clients for the model owner, the input owners and the result owner.

use std::time::Duration;

use crate::error::Result;
use crate::frame::{Frame, FrameType};
use crate::messages::{decode_json, decode_result, encode_inputs, encode_json, ModelUpload, SessionInfo};
use crate::net::request;

/// Model owner: upload a model and obtain a fresh single-use session.
pub fn upload_model(garbler: &str, req: &ModelUpload, timeout: Duration) -> Result<(u128, SessionInfo)> {
    let reply = request(
        garbler,
        &Frame::new(FrameType::ModelUpload, 0, encode_json(req)),
        timeout,
    )?
    .expect(FrameType::ModelUpload)?;
    Ok((reply.session, decode_json(&reply.payload)?))
}

/// Input owner: contribute the values of one slot.
pub fn upload_inputs(garbler: &str, session: u128, slot: u16, values: &[i128], timeout: Duration) -> Result<()> {
    let frame = Frame::new(FrameType::InputUpload, session, encode_inputs(slot, values)?);
    request(garbler, &frame, timeout)?.expect(FrameType::InputUpload)?;
    Ok(())
}

/// Result owner: wait for and fetch the decoded integer outputs.
pub fn fetch_result(garbler: &str, session: u128, token: &str, timeout: Duration) -> Result<Vec<i64>> {
    let frame = Frame::new(FrameType::Result, session, token.as_bytes().to_vec());
    let reply = request(garbler, &frame, timeout)?.expect(FrameType::Result)?;
    decode_result(&reply.payload)
}

/// All roles in one call: upload the model, let each owner upload its slice
/// concurrently, and fetch the result.
pub fn run_inference(
    garbler: &str,
    req: &ModelUpload,
    owner_inputs: &[Vec<i128>],
    timeout: Duration,
) -> Result<(u128, SessionInfo, Vec<i64>)> {
    let (session, info) = upload_model(garbler, req, timeout)?;
    let fetch = {
        let (garbler, token) = (garbler.to_string(), req.token.clone());
        std::thread::spawn(move || fetch_result(&garbler, session, &token, timeout))
    };
    std::thread::scope(|s| {
        let handles: Vec<_> = owner_inputs
            .iter()
            .enumerate()
            .map(|(slot, values)| s.spawn(move || upload_inputs(garbler, session, slot as u16, values, timeout)))
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("input owner thread"))
    })?;
    let values = fetch.join().expect("result owner thread")?;
    Ok((session, info, values))
}
