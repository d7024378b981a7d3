//! Message links between the server and its clients.
//!
//! Both links move encoded frames, so the in-process path exercises the same
//! codec as TCP.

use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};

use super::codec::{decode_message_with_limit, encode_message, read_message, write_message, Message};
use crate::error::{Error, Result};

pub trait Link: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
    fn recv(&mut self) -> Result<Message>;
}

/// One end of an in-process link.
pub struct ChannelLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    max_frame: usize,
}

/// A connected pair of in-process link ends.
pub fn channel_pair(max_frame: usize) -> (ChannelLink, ChannelLink) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (
        ChannelLink {
            tx: tx_a,
            rx: rx_a,
            max_frame,
        },
        ChannelLink {
            tx: tx_b,
            rx: rx_b,
            max_frame,
        },
    )
}

impl Link for ChannelLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.tx
            .send(encode_message(msg))
            .map_err(|_| Error::Transport(format!("peer hung up before {}", msg.kind())))
    }

    fn recv(&mut self) -> Result<Message> {
        let frame = self
            .rx
            .recv()
            .map_err(|_| Error::Transport("peer hung up".into()))?;
        Ok(decode_message_with_limit(&frame, self.max_frame)?)
    }
}

pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    max_frame: usize,
}

impl TcpLink {
    pub fn new(stream: TcpStream, max_frame: usize) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            max_frame,
        })
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        Ok(write_message(&mut self.writer, msg)?)
    }

    fn recv(&mut self) -> Result<Message> {
        Ok(read_message(&mut self.reader, self.max_frame)?)
    }
}
