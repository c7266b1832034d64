#!/usr/bin/env python3
"""Regenerates golden.txt with a self-contained Keccak-256 / EIP-712 encoder.

Nothing here shares code with the Rust crate; it exists so the vectors can be
re-derived independently. The permutation is checked against hashlib's
SHA3-256 (same sponge, different padding byte) before anything is emitted.
"""
import hashlib
import sys

RC = [
    0x0000000000000001, 0x0000000000008082, 0x800000000000808A, 0x8000000080008000,
    0x000000000000808B, 0x0000000080000001, 0x8000000080008081, 0x8000000000008009,
    0x000000000000008A, 0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
    0x000000008000808B, 0x800000000000008B, 0x8000000000008089, 0x8000000000008003,
    0x8000000000008002, 0x8000000000000080, 0x000000000000800A, 0x800000008000000A,
    0x8000000080008081, 0x8000000000008080, 0x0000000080000001, 0x8000000080008008,
]
ROT = [
    [0, 36, 3, 41, 18], [1, 44, 10, 45, 2], [62, 6, 43, 15, 61],
    [28, 55, 25, 21, 56], [27, 20, 39, 8, 14],
]
MASK = (1 << 64) - 1


def rol(x, n):
    n %= 64
    return ((x << n) | (x >> (64 - n))) & MASK if n else x


def keccak_f(a):
    for rc in RC:
        c = [a[x][0] ^ a[x][1] ^ a[x][2] ^ a[x][3] ^ a[x][4] for x in range(5)]
        d = [c[(x - 1) % 5] ^ rol(c[(x + 1) % 5], 1) for x in range(5)]
        a = [[a[x][y] ^ d[x] for y in range(5)] for x in range(5)]
        b = [[0] * 5 for _ in range(5)]
        for x in range(5):
            for y in range(5):
                b[y][(2 * x + 3 * y) % 5] = rol(a[x][y], ROT[x][y])
        a = [[b[x][y] ^ ((~b[(x + 1) % 5][y]) & b[(x + 2) % 5][y]) for y in range(5)] for x in range(5)]
        a[0][0] ^= rc
    return a


def sponge(data, pad):
    rate = 136
    msg = bytearray(data)
    msg.append(pad)
    while len(msg) % rate:
        msg.append(0)
    msg[-1] |= 0x80
    a = [[0] * 5 for _ in range(5)]
    for off in range(0, len(msg), rate):
        block = msg[off:off + rate]
        for i in range(rate // 8):
            x, y = i % 5, i // 5
            a[x][y] ^= int.from_bytes(block[8 * i:8 * i + 8], "little")
        a = keccak_f(a)
    out = b""
    for i in range(4):
        x, y = i % 5, i // 5
        out += a[x][y].to_bytes(8, "little")
    return out


def keccak(data):
    return sponge(data, 0x01)


def word(n):
    return n.to_bytes(32, "big")


def addr_word(addr20):
    return b"\x00" * 12 + addr20


def typed_digest(chain_id, contract, rnd, trial, cv, name, version):
    domain_type = keccak(b"EIP712Domain(string name,string version,uint256 chainId,address verifyingContract)")
    domain = keccak(domain_type + keccak(name.encode()) + keccak(version.encode()) + word(chain_id) + addr_word(contract))
    msg_type = keccak(b"Message(uint256 round,uint256 trialNum,bytes32 cv)")
    struct = keccak(msg_type + word(rnd) + word(trial) + cv)
    return keccak(b"\x19\x01" + domain + struct)


def merkle_loop(leaves):
    """Transliteration of the cursor loop: leaves first, then earlier hashes."""
    n = len(leaves)
    hashes = []
    leaf_pos = 0
    hash_pos = 0
    for _ in range(n - 1):
        pair = []
        for _ in range(2):
            if leaf_pos < n:
                pair.append(leaves[leaf_pos])
                leaf_pos += 1
            else:
                pair.append(hashes[hash_pos])
                hash_pos += 1
        hashes.append(keccak(pair[0] + pair[1]))
    return hashes[-1]


def h(a, b):
    return keccak(a + b)


def merkle_by_hand(l):
    n = len(l)
    if n == 3:
        return h(l[2], h(l[0], l[1]))
    if n == 5:
        return h(h(l[2], l[3]), h(l[4], h(l[0], l[1])))
    if n == 7:
        return h(h(l[6], h(l[0], l[1])), h(h(l[2], l[3]), h(l[4], l[5])))
    return None


def merkle_recursive(l):
    if len(l) == 1:
        return l[0]
    mid = len(l) // 2
    return h(merkle_recursive(l[:mid]), merkle_recursive(l[mid:]))


def main():
    # Self-check the permutation against the stdlib's SHA3 before trusting it.
    for probe in [b"", b"abc", bytes(range(200)), b"x" * 135, b"x" * 136, b"x" * 137]:
        assert sponge(probe, 0x06) == hashlib.sha3_256(probe).digest(), probe
    assert keccak(b"").hex() == "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"

    out = []
    out.append("# golden vectors: keccak256, EIP-712 Message digest, merkle roots")
    out.append("# keccak <input-hex or -> <digest>")
    for data in [b"", b"abc", bytes(32), bytes(range(64)), b"x" * 136, b"x" * 137]:
        out.append("keccak %s %s" % (data.hex() or "-", keccak(data).hex()))

    out.append("# chain <secret> <inner> <outer>")
    for secret in [bytes(32), bytes([0xFF] * 32), keccak(b"secret-1")]:
        inner = keccak(secret)
        out.append("chain %s %s %s" % (secret.hex(), inner.hex(), keccak(inner).hex()))

    out.append("# eip712 <chainId> <verContract> <round> <trialNum> <cv> <name> <version> <digest>")
    one = bytes(19) + b"\x01"
    cases = [
        (1, one, 0, 0, bytes(32), "Commit Reveal2", "1"),
        (1, one, 0, 1, bytes(32), "Commit Reveal2", "1"),
        (2, one, 0, 0, bytes(32), "Commit Reveal2", "1"),
        (31337, bytes.fromhex("5fbdb2315678afecb367f032d93f642f64180aa3"), 7, 3,
         keccak(keccak(b"secret-1")), "Commit Reveal2", "1"),
        (11155111, bytes([0xAB] * 20), 2**64 - 1, 12, bytes([0x11] * 32), "Other Beacon", "2"),
    ]
    for chain_id, contract, rnd, trial, cv, name, version in cases:
        d = typed_digest(chain_id, contract, rnd, trial, cv, name, version)
        out.append("eip712 %d %s %d %d %s %s %s %s" % (
            chain_id, contract.hex(), rnd, trial, cv.hex(), name.replace(" ", "_"), version, d.hex()))

    out.append("# merkle <leaf,leaf,...> <root>   (leaf i = keccak(uint256(i)))")
    for n in [2, 3, 4, 5, 7, 8, 16]:
        leaves = [keccak(word(i)) for i in range(n)]
        root = merkle_loop(leaves)
        hand = merkle_by_hand(leaves)
        if hand is not None:
            assert hand == root, n
        if n & (n - 1) == 0:
            assert merkle_recursive(leaves) == root, n
        out.append("merkle %s %s" % (",".join(x.hex() for x in leaves), root.hex()))

    sys.stdout.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
