#!/usr/bin/env python3
"""Reference external predictor for the slidepipe wire protocol.

Serves the pixel-threshold predictor over TCP using nothing but the
standard library, as a template for wiring a real model into `slidepipe
infer --predictor external:tcp:HOST:PORT`. See docs/protocol.md for the
byte-level frame layout.

Usage:
    python3 scripts/reference_predictor.py [--port 0] [--threshold 128]
                                           [--classes 2] [--margin 4.0]

The chosen endpoint is printed on stdout, e.g. `tcp:127.0.0.1:46051`.
"""

import argparse
import socket
import struct
import sys
import threading
import zlib

MAGIC = b"WSPR"
VERSION = 1
HEADER = struct.Struct("<4sHBQHHHI")  # magic, version, kind, patch_id, C, H, W, payload_len
KIND_REQUEST, KIND_RESPONSE, KIND_ERROR = 0, 1, 2


def read_exact(conn, n):
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            if buf:
                raise ConnectionError("connection closed mid-frame")
            return None
        buf += chunk
    return buf


def send_frame(conn, kind, patch_id, classes, height, width, payload):
    header = HEADER.pack(MAGIC, VERSION, kind, patch_id, classes, height, width, len(payload))
    conn.sendall(header + payload + struct.pack("<I", zlib.crc32(payload)))


def predict(pixels, height, width, channels, classes, threshold, margin):
    """Per pixel: class 1 wins where the mean channel value >= threshold."""
    out = bytearray(classes * height * width * 4)
    plane = height * width
    pos_bytes = struct.pack("<f", margin)
    neg_bytes = struct.pack("<f", -margin)
    for i in range(plane):
        total = 0
        for c in range(channels):
            total += pixels[i * channels + c]
        winner = 1 if total // channels >= threshold else 0
        for c in range(classes):
            bits = pos_bytes if c == winner else neg_bytes
            off = (c * plane + i) * 4
            out[off:off + 4] = bits
    return bytes(out)


def serve_connection(conn, args):
    try:
        hello = read_exact(conn, 6)
        if hello is None or hello[:4] != MAGIC:
            return
        (version,) = struct.unpack("<H", hello[4:6])
        if version != VERSION:
            return
        conn.sendall(MAGIC + struct.pack("<HHH", VERSION, args.classes, args.input_size))

        while True:
            raw = read_exact(conn, HEADER.size)
            if raw is None:
                return
            magic, version, kind, patch_id, channels, height, width, payload_len = HEADER.unpack(raw)
            if magic != MAGIC or version != VERSION:
                return
            payload = read_exact(conn, payload_len) if payload_len else b""
            (crc,) = struct.unpack("<I", read_exact(conn, 4))
            if crc != zlib.crc32(payload or b""):
                return  # corrupted stream; drop the connection
            if kind != KIND_REQUEST or payload_len != height * width * channels:
                send_frame(conn, KIND_ERROR, patch_id, 0, 0, 0, b"malformed request")
                continue
            try:
                scores = predict(payload, height, width, channels, args.classes,
                                 args.threshold, args.margin)
                send_frame(conn, KIND_RESPONSE, patch_id, args.classes, height, width, scores)
            except Exception as exc:  # per-patch failure -> error frame
                send_frame(conn, KIND_ERROR, patch_id, 0, 0, 0, str(exc).encode())
    finally:
        conn.close()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--port", type=int, default=0, help="0 picks a free port")
    parser.add_argument("--threshold", type=int, default=128)
    parser.add_argument("--classes", type=int, default=2)
    parser.add_argument("--margin", type=float, default=4.0)
    parser.add_argument("--input-size", type=int, default=0,
                        help="advertised expected patch side (e.g. 768 for the usual "
                             "segmentation-model crop); 0 accepts any size")
    args = parser.parse_args()

    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind(("127.0.0.1", args.port))
    server.listen(16)
    print(f"tcp:127.0.0.1:{server.getsockname()[1]}", flush=True)

    while True:
        conn, _ = server.accept()
        threading.Thread(target=serve_connection, args=(conn, args), daemon=True).start()


if __name__ == "__main__":
    sys.exit(main())
