"""Linking: resolve external references, compact call sites, pack the pool.

Linking a class loads everything its pool mentions, unifies symbolic member
handles with real field/method objects, structurally checks each method,
rewrites the call and static-access instructions that no longer need the
pool, marks what the bytecode still uses, packs the pool and finally remaps
every surviving operand.
"""

import struct
from dataclasses import dataclass, field

from . import constpool as cp
from . import lifecycle as lc
from . import opcodes as ops
from .errors import (BadOpcode, ClassNotFound, InternalError, InvalidTransition,
                     NoSuchField, NoSuchMethod, Truncated, VerifyError)

_OP = ops.BY_NAME


@dataclass
class LinkContext:
    registry: object
    loader: object = None               # used to load referenced classes
    introspection: bool = True
    private_field_opt: bool = False
    closed_packages: set = field(default_factory=set)
    closed_world: bool = False

    def package_closed(self, package):
        return self.closed_world or package in self.closed_packages


def _package_of(name):
    return name.rsplit("/", 1)[0] if "/" in name else ""


def link(cls, ctx):
    """Bring a loaded class to state linked."""
    if cls.state != lc.LOADED:
        raise InvalidTransition("%s is %s, cannot link" % (cls.name, cls.state))
    pool = cls.pool

    for entry in pool.atable:
        if entry.kind != cp.A_CLASS:
            continue
        ref = entry.payload
        if ref.state == lc.UNLOADED:
            if ctx.loader is None:
                raise ClassNotFound(ref.name)
            ctx.loader.ensure_loaded(ref.name)

    for entry in pool.atable:
        if entry.kind not in (cp.A_FIELD, cp.A_METHOD):
            continue
        handle = entry.payload
        if handle.resolved is not None:
            continue
        if handle.is_field:
            found = handle.owner.find_field(handle.name, handle.descriptor)
            if found is None:
                raise NoSuchField("%s.%s:%s" % (handle.owner.name, handle.name,
                                                handle.descriptor))
        else:
            found = handle.owner.find_method(handle.name, handle.descriptor)
            if found is None:
                raise NoSuchMethod("%s.%s%s" % (handle.owner.name, handle.name,
                                                handle.descriptor))
        handle.resolved = found

    for m in cls.methods:
        if m.code is not None:
            m.code = m.code_loaded.clone()
            prelink_method(m, pool, ctx)
    for m in cls.methods:
        if m.code is not None:
            encode_static_refs(m, pool)
    if ctx.private_field_opt or ctx.closed_world or ctx.closed_packages:
        rewrite_private_fields(cls, ctx)
    # rewrites above drop instruction references, but the handles those
    # cells marked transitively are still flagged; recompute from the
    # final code so nothing unreachable keeps a mark
    cp.reset_marks(pool)
    for m in cls.methods:
        if m.code is not None:
            _mark_method(m, pool)
    mark_reflection(pool, cls, ctx)
    cls.pack_stats = cp.pack(pool)
    for m in cls.methods:
        if m.code is not None:
            relink_method(m, pool)
    cls.state = lc.LINKED


# opcodes whose u2 operand names a member-ref cell, with the cell kind
_INVOKES = {}
_FIELD_OPS = {}


def _init_tables():
    _INVOKES[_OP["invokevirtual"]] = cp.V_METHODREF
    _INVOKES[_OP["invokespecial"]] = cp.V_METHODREF
    _INVOKES[_OP["invokestatic"]] = cp.V_METHODREF
    _INVOKES[_OP["invokeinterface"]] = cp.V_IFACEREF
    for n in ("getstatic", "putstatic", "getfield", "putfield"):
        _FIELD_OPS[_OP[n]] = cp.V_FIELDREF


_init_tables()

_CLASS_OPS = {_OP[n] for n in ("new", "checkcast", "instanceof", "multianewarray")}
_QUICK_KIND = {
    _OP["ldc_quick_i"]: cp.V_INT, _OP["ldc_quick_i_w"]: cp.V_INT,
    _OP["ldc_quick_f"]: cp.V_FLOAT, _OP["ldc_quick_f_w"]: cp.V_FLOAT,
    _OP["ldc2_quick_l"]: cp.V_LONG_HI, _OP["ldc2_quick_d"]: cp.V_DBL_HI,
}
_LOCAL_1 = {_OP[n] for n in ("iload", "fload", "aload", "istore", "fstore",
                             "astore", "ret")}
_LOCAL_2 = {_OP[n] for n in ("lload", "dload", "lstore", "dstore")}
_LOCAL_FIXED = {}
for _base, _wide in (("iload", 1), ("lload", 2), ("fload", 1), ("dload", 2),
                     ("aload", 1), ("istore", 1), ("lstore", 2), ("fstore", 1),
                     ("dstore", 2), ("astore", 1)):
    for _k in range(4):
        _LOCAL_FIXED[_OP["%s_%d" % (_base, _k)]] = (_k, _wide)


def _operand_u2(bc, off):
    return struct.unpack_from(">H", bc, off + 1)[0]


def _cell_for(pool, raw_idx, expect_kind, off):
    placed = pool.origin.get(raw_idx)
    if placed is None or placed[0] != cp.VTABLE:
        raise VerifyError("operand %d at %d is not a pool constant" % (raw_idx, off))
    cell = pool.vtable[placed[1]]
    if cell.kind != expect_kind:
        raise VerifyError("operand %d at %d holds %s, expected %s"
                          % (raw_idx, off, cell.kind, expect_kind))
    return placed[1], cell


def _member_of(pool, cell):
    _, member_aidx = cell.value >> 16, cell.value & 0xFFFF
    return pool.atable[member_aidx].payload


def prelink_method(m, pool, ctx):
    """Structural checks, then invokevirtual compaction, then marking.

    The marking pass runs over the rewritten code so compacted sites no
    longer pin their pool entries.
    """
    if m.code is None:
        return
    bc = m.code.bytecode
    try:
        bounds = ops.boundaries(bc)
    except (BadOpcode, Truncated) as e:
        raise VerifyError("%s: %s" % (m, e)) from None

    # pass 1: structural and resolution checks
    for off, op, size in ops.walk(bc):
        for t in ops.branch_targets(bc, off):
            if t not in bounds:
                raise VerifyError("%s: branch from %d to non-boundary %d"
                                  % (m, off, t))
        if op in _LOCAL_1 or op in _LOCAL_2:
            idx = bc[off + 1]
            width = 2 if op in _LOCAL_2 else 1
            if idx + width > m.code.max_locals:
                raise VerifyError("%s: local %d out of range at %d" % (m, idx, off))
        elif op in _LOCAL_FIXED:
            idx, width = _LOCAL_FIXED[op]
            if idx + width > m.code.max_locals:
                raise VerifyError("%s: local %d out of range at %d" % (m, idx, off))
        elif op == ops.WIDE:
            sub = bc[off + 1]
            idx = _operand_u2(bc, off + 1)
            width = 2 if sub in _LOCAL_2 else 1
            if idx + width > m.code.max_locals:
                raise VerifyError("%s: local %d out of range at %d" % (m, idx, off))
        elif op == _OP["iinc"]:
            if bc[off + 1] + 1 > m.code.max_locals:
                raise VerifyError("%s: local %d out of range at %d"
                                  % (m, bc[off + 1], off))
        elif op in _INVOKES:
            _, cell = _cell_for(pool, _operand_u2(bc, off), _INVOKES[op], off)
            target = _member_of(pool, cell).resolved
            if target is None:
                raise VerifyError("%s: unresolved call at %d" % (m, off))
            if op == _OP["invokestatic"]:
                if not target.is_static:
                    raise VerifyError("%s: invokestatic on instance method at %d"
                                      % (m, off))
            elif target.is_static:
                raise VerifyError("%s: instance call on static method at %d"
                                  % (m, off))
            if op == _OP["invokeinterface"] and bc[off + 4] != 0:
                raise VerifyError("%s: invokeinterface pad byte not zero at %d"
                                  % (m, off))
        elif op in _FIELD_OPS:
            _, cell = _cell_for(pool, _operand_u2(bc, off), cp.V_FIELDREF, off)
            f = _member_of(pool, cell).resolved
            if f is None:
                raise VerifyError("%s: unresolved field at %d" % (m, off))
            is_static_op = op in (_OP["getstatic"], _OP["putstatic"])
            if f.is_static != is_static_op:
                raise VerifyError("%s: static/instance mismatch for %s at %d"
                                  % (m, f.name, off))
        elif op in _CLASS_OPS:
            raw_idx = _operand_u2(bc, off)
            placed = pool.origin.get(raw_idx)
            if placed is None or placed[0] != cp.ATABLE \
                    or pool.atable[placed[1]].kind != cp.A_CLASS:
                raise VerifyError("%s: operand %d at %d is not a class constant"
                                  % (m, raw_idx, off))
        elif op in _QUICK_KIND:
            idx = bc[off + 1] if size == 2 else _operand_u2(bc, off)
            if idx >= len(pool.vtable) or pool.vtable[idx].kind != _QUICK_KIND[op]:
                raise VerifyError("%s: quick operand %d bad at %d" % (m, idx, off))
        elif op in ops.QUICK_A_U1 or op in ops.QUICK_A_U2:
            idx = bc[off + 1] if size == 2 else _operand_u2(bc, off)
            want = cp.A_STRING if op in (ops.BY_NAME["ldc_quick_a"],
                                         ops.BY_NAME["ldc_quick_a_w"]) else cp.A_CLASS
            if idx >= len(pool.atable) or pool.atable[idx].kind != want:
                raise VerifyError("%s: quick operand %d bad at %d" % (m, idx, off))
        elif op in (_OP["ldc"], _OP["ldc_w"], _OP["ldc2_w"]):
            raise VerifyError("%s: raw constant load survived loading at %d"
                              % (m, off))

    code_len = len(bc)
    for start, end, handler, catch in m.code.exception_table:
        if not (start < end <= code_len):
            raise VerifyError("%s: exception range [%d,%d) invalid" % (m, start, end))
        if start not in bounds or handler not in bounds:
            raise VerifyError("%s: exception boundary not on an instruction" % m)
        if end != code_len and end not in bounds:
            raise VerifyError("%s: exception range end %d not on an instruction"
                              % (m, end))
        if catch is not None and (catch >= len(pool.atable)
                                  or pool.atable[catch].kind != cp.A_CLASS):
            raise VerifyError("%s: catch type %s is not a class entry" % (m, catch))

    # pass 2: compact invokevirtual sites where the encoding fits
    for off, op, size in ops.walk(bc):
        if op == _OP["invokevirtual"]:
            _, cell = _cell_for(pool, _operand_u2(bc, off), cp.V_METHODREF, off)
            target = _member_of(pool, cell).resolved
            compact_invokevirtual(bc, off, target)

    # pass 3: mark everything the final code still references
    _mark_method(m, pool)


def compact_invokevirtual(bc, off, target):
    """Rewrite one invokevirtual site when both bytes fit.

    The 16-bit pool operand becomes (argument slot count, dispatch table
    slot); returns True when rewritten.  Sites whose target has no dispatch
    slot (private or otherwise non-virtual) are left alone.
    """
    if target.dispatch_slot is None:
        return False
    if target.nargs >= 256 or target.dispatch_slot >= 256:
        return False
    bc[off] = _OP["invokevirtual_quick"]
    bc[off + 1] = target.nargs
    bc[off + 2] = target.dispatch_slot
    return True


def _mark_method(m, pool):
    bc = m.code.bytecode
    for off, op, size in ops.walk(bc):
        if op in _INVOKES or op in _FIELD_OPS:
            vidx, _ = _cell_for(pool, _operand_u2(bc, off),
                                _INVOKES.get(op) or cp.V_FIELDREF, off)
            cp.mark(pool, cp.VTABLE, vidx)
        elif op in _CLASS_OPS:
            placed = pool.origin[_operand_u2(bc, off)]
            cp.mark(pool, cp.ATABLE, placed[1])
        elif op in _QUICK_KIND:
            idx = bc[off + 1] if ops.OPERAND_BYTES[op] == 1 else _operand_u2(bc, off)
            cp.mark(pool, cp.VTABLE, idx)
        elif op in ops.QUICK_A_U1:
            cp.mark(pool, cp.ATABLE, bc[off + 1])
        elif op in ops.QUICK_A_U2:
            cp.mark(pool, cp.ATABLE, _operand_u2(bc, off))
    for _, _, _, catch in m.code.exception_table:
        if catch is not None:
            cp.mark(pool, cp.ATABLE, catch)


def encode_static_refs(m, pool):
    """Turn static accesses into quick forms carrying (offset << 3) | type.

    Only statics declared along the owning class's superclass chain are
    rewritten: a 13-bit offset is resolved by walking that chain at run
    time, so an unrelated owner has to stay symbolic.
    """
    if m.code is None:
        return
    bc = m.code.bytecode
    for off, op, size in ops.walk(bc):
        if op not in (_OP["getstatic"], _OP["putstatic"]):
            continue
        vidx, cell = _cell_for(pool, _operand_u2(bc, off), cp.V_FIELDREF, off)
        f = _member_of(pool, cell).resolved
        if not any(k is f.owner for k in m.owner.hierarchy()):
            continue
        bc[off] = _OP["getstatic_quick" if op == _OP["getstatic"]
                      else "putstatic_quick"]
        struct.pack_into(">H", bc, off + 1, (f.offset << 3) | f.type_code)
        cp.unmark(pool, cp.VTABLE, vidx)


def rewrite_private_fields(cls, ctx):
    """Optional pass: getfield/putfield over closed fields become offsets.

    Eligibility follows the closure flags: private fields of this class
    under the private-field option, non-public fields of classes in closed
    packages, and every field under a closed world.
    """
    pool = cls.pool
    for m in cls.methods:
        if m.code is None:
            continue
        bc = m.code.bytecode
        for off, op, size in ops.walk(bc):
            if op not in (_OP["getfield"], _OP["putfield"]):
                continue
            vidx, cell = _cell_for(pool, _operand_u2(bc, off), cp.V_FIELDREF, off)
            f = _member_of(pool, cell).resolved
            if not _field_rewritable(f, cls, ctx):
                continue
            if f.offset > lc.MAX_STATIC_OFFSET:
                continue
            bc[off] = _OP["getfield_quick" if op == _OP["getfield"]
                          else "putfield_quick"]
            struct.pack_into(">H", bc, off + 1, (f.offset << 3) | f.type_code)
            cp.unmark(pool, cp.VTABLE, vidx)


def _field_rewritable(f, cls, ctx):
    if ctx.closed_world:
        return True
    if not f.is_public and ctx.package_closed(_package_of(f.owner.name)):
        return True
    return ctx.private_field_opt and f.is_private and f.owner is cls


def mark_reflection(pool, cls, ctx):
    """Keep member name and descriptor text alive when introspection is on."""
    if not ctx.introspection:
        return
    for member in cls.fields + cls.methods:
        for text in (member.name, member.descriptor):
            aidx = pool.utf8_aindex(text)
            if aidx is not None:
                cp.mark(pool, cp.ATABLE, aidx)


def relink_method(m, pool):
    """Rewrite every pool-referencing operand through the pack remap."""
    if m.code is None:
        return
    bc = m.code.bytecode

    def remap(space, idx, off):
        table = pool.remap_a if space == cp.ATABLE else pool.remap_v
        try:
            return table[idx]
        except KeyError:
            raise InternalError("%s: operand at %d references swept %s entry %d"
                                % (m, off, space, idx)) from None

    for off, op, size in ops.walk(bc):
        if op in _INVOKES or op in _FIELD_OPS:
            placed = pool.origin[_operand_u2(bc, off)]
            struct.pack_into(">H", bc, off + 1, remap(cp.VTABLE, placed[1], off))
        elif op in _CLASS_OPS:
            placed = pool.origin[_operand_u2(bc, off)]
            struct.pack_into(">H", bc, off + 1, remap(cp.ATABLE, placed[1], off))
        elif op in _QUICK_KIND:
            if ops.OPERAND_BYTES[op] == 1:
                bc[off + 1] = remap(cp.VTABLE, bc[off + 1], off)
            else:
                struct.pack_into(">H", bc, off + 1,
                                 remap(cp.VTABLE, _operand_u2(bc, off), off))
        elif op in ops.QUICK_A_U1:
            bc[off + 1] = remap(cp.ATABLE, bc[off + 1], off)
        elif op in ops.QUICK_A_U2:
            struct.pack_into(">H", bc, off + 1,
                             remap(cp.ATABLE, _operand_u2(bc, off), off))
    m.code.exception_table = [
        (s, e, h, None if c is None else remap(cp.ATABLE, c, 0))
        for s, e, h, c in m.code.exception_table]
    m.code.relinked = True
