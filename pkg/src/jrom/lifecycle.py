"""Class lifecycle: unloaded -> loaded -> linked, plus the ready flag.

Loading parses the class file, builds and prelinks the runtime pool, lays
out fields, rewrites the constant-loading instructions to their quick forms
and builds the dispatch table.  The ready flag is orthogonal: a class
becomes ready once its statics are initialized, which may happen while it
is merely loaded.
"""

import struct
from dataclasses import dataclass, field as dc_field

from . import classfile as cf
from . import constpool as cp
from . import descriptors as desc
from . import opcodes as ops
from .errors import (BadPoolRef, ClassNotFound, HierarchyCycle, InvalidName,
                     InvalidTransition, NameMismatch, PoolOverflow,
                     StaticOverflow, UnsupportedClinit)

UNLOADED = "unloaded"
LOADED = "loaded"
LINKED = "linked"

_OP = ops.BY_NAME

MAX_STATIC_OFFSET = (1 << 13) - 1


@dataclass
class FieldRep:
    owner: object
    name: str
    descriptor: str
    access_flags: int
    is_static: bool
    type_code: int
    zone: str = None        # "a" or "v" when static
    offset: int = None      # hierarchy-wide slot offset (static or instance)
    constant_value: tuple = None

    @property
    def is_private(self):
        return bool(self.access_flags & cf.ACC_PRIVATE)

    @property
    def is_public(self):
        return bool(self.access_flags & cf.ACC_PUBLIC)

    @property
    def width(self):
        return desc.slot_width(self.descriptor)


@dataclass
class MethodCode:
    bytecode: bytearray
    max_stack: int
    max_locals: int
    exception_table: list   # (start, end, handler, catch atable index or None)
    stack_maps: bytes = None
    relinked: bool = False
    _size_cache: dict = dc_field(default=None, repr=False, compare=False)

    def clone(self):
        return MethodCode(bytearray(self.bytecode), self.max_stack,
                          self.max_locals,
                          [tuple(e) for e in self.exception_table],
                          self.stack_maps, self.relinked)

    def instruction_sizes(self):
        """offset -> instruction size; quick rewrites never change sizes."""
        if self._size_cache is None:
            self._size_cache = {off: size
                                for off, _, size in ops.walk(self.bytecode)}
        return self._size_cache


@dataclass
class MethodRep:
    owner: object
    name: str
    descriptor: str
    access_flags: int
    nargs: int
    code: MethodCode = None
    code_loaded: MethodCode = None
    dispatch_slot: int = None

    @property
    def key(self):
        return (self.name, self.descriptor)

    @property
    def is_static(self):
        return bool(self.access_flags & cf.ACC_STATIC)

    @property
    def is_private(self):
        return bool(self.access_flags & cf.ACC_PRIVATE)

    @property
    def is_virtual(self):
        return (not self.is_static and not self.is_private
                and self.name not in ("<init>", "<clinit>"))

    def __repr__(self):
        return "<method %s.%s%s>" % (self.owner.name if self.owner else "?",
                                     self.name, self.descriptor)


@dataclass
class StageView:
    """Everything needed to execute a method at one pipeline stage."""
    pool: cp.RuntimePool
    codes: dict             # (name, descriptor) -> MethodCode
    relinked: bool


class ClassRep:
    """A class known to the registry, in any lifecycle state."""

    def __init__(self, name, synthetic=False):
        self.name = name
        self.state = UNLOADED if not synthetic else LOADED
        self.ready = synthetic
        self.synthetic = synthetic
        self.access_flags = 0
        self.super_cls = None
        self.interfaces = []
        self.pool = None
        self.fields = []
        self.methods = []
        self.dispatch_table = []
        self.a_static_zone = []
        self.v_static_zone = []
        self.a_base = 0
        self.v_base = 0
        self.instance_base = 0
        self.instance_size = 0
        self.raw_stats = None
        self.loaded_view = None
        self.pack_stats = None
        self.zones_initial = None
        self._defaults = None

    def __repr__(self):
        flag = "+ready" if self.ready else ""
        return "<class %s %s%s>" % (self.name, self.state, flag)

    @property
    def is_interface(self):
        return bool(self.access_flags & cf.ACC_INTERFACE)

    def view(self, stage):
        if stage == LOADED:
            if self.loaded_view is None:
                raise InvalidTransition("%s has no loaded snapshot" % self.name)
            return self.loaded_view
        return StageView(self.pool, {m.key: m.code for m in self.methods},
                         relinked=True)

    def find_method(self, name, descriptor):
        """JVM-style resolution: the class, its supers, then interfaces."""
        k = self
        while k is not None:
            for m in k.methods:
                if m.name == name and m.descriptor == descriptor:
                    return m
            k = k.super_cls
        seen = set()
        stack = []
        k = self
        while k is not None:
            stack.extend(k.interfaces)
            k = k.super_cls
        while stack:
            iface = stack.pop()
            if iface.name in seen:
                continue
            seen.add(iface.name)
            for m in iface.methods:
                if m.name == name and m.descriptor == descriptor:
                    return m
            stack.extend(iface.interfaces)
        return None

    def find_field(self, name, descriptor):
        """Resolution order: own fields, then interfaces, then superclass."""
        for f in self.fields:
            if f.name == name and f.descriptor == descriptor:
                return f
        for iface in self.interfaces:
            found = iface.find_field(name, descriptor)
            if found is not None:
                return found
        if self.super_cls is not None:
            return self.super_cls.find_field(name, descriptor)
        return None

    def hierarchy(self):
        k = self
        while k is not None:
            yield k
            k = k.super_cls

    def is_subclass_of(self, other):
        if other.name == "java/lang/Object":
            return True
        for k in self.hierarchy():
            if k is other:
                return True
            stack = list(k.interfaces)
            while stack:
                iface = stack.pop()
                if iface is other:
                    return True
                stack.extend(iface.interfaces)
        return False

    def static_slot(self, zone, offset):
        """Map a hierarchy-wide static offset to (owning class, local index)."""
        for k in self.hierarchy():
            base = k.a_base if zone == "a" else k.v_base
            size = len(k.a_static_zone if zone == "a" else k.v_static_zone)
            if base <= offset < base + size:
                return k, offset - base
        raise BadPoolRef("static offset %d not in %s-zone of %s hierarchy"
                         % (offset, zone, self.name))

    def instance_defaults(self):
        if self._defaults is None:
            slots = [0] * self.instance_size
            for k in self.hierarchy():
                for f in k.fields:
                    if f.is_static:
                        continue
                    if f.type_code == desc.TC_REF:
                        slots[f.offset] = None
                    elif f.type_code == desc.TC_FLOAT:
                        slots[f.offset] = 0.0
                    elif f.type_code == desc.TC_DOUBLE:
                        slots[f.offset] = 0.0
                        slots[f.offset + 1] = None
                    elif f.type_code == desc.TC_LONG:
                        slots[f.offset + 1] = None
            self._defaults = slots
        return list(self._defaults)


class Registry:
    """Name -> ClassRep map; the single shared structure of a pipeline."""

    PRIMITIVES = ("int", "long", "float", "double",
                  "byte", "short", "char", "boolean")

    def __init__(self):
        self.classes = {}
        for p in self.PRIMITIVES:
            self.classes[p] = ClassRep(p, synthetic=True)

    def new_unloaded(self, name):
        if not name:
            raise InvalidName("empty class name")
        cls = self.classes.get(name)
        if cls is None:
            if name.startswith("["):
                cls = self._make_array(name)
            else:
                cls = ClassRep(name)
            self.classes[name] = cls
        return cls

    # the resolver handed to prelinking and loading
    def resolve(self, name):
        return self.new_unloaded(name)

    def get(self, name):
        return self.classes.get(name)

    def _make_array(self, name):
        cls = ClassRep(name, synthetic=True)
        cls.super_cls = self.new_unloaded("java/lang/Object")
        return cls

    def loadable(self):
        return [c for c in self.classes.values() if not c.synthetic]


class Classpath:
    """Ordered directories searched for <binary-name>.class files."""

    def __init__(self, paths):
        self.paths = list(paths)

    def find(self, name):
        import os
        rel = name.replace("/", os.sep) + ".class"
        for p in self.paths:
            full = os.path.join(p, rel)
            if os.path.isfile(full):
                with open(full, "rb") as fh:
                    return fh.read()
        return None


class Loader:
    """Loads classes from a classpath, superclasses first."""

    def __init__(self, classpath, registry):
        self.classpath = classpath
        self.registry = registry
        self._in_progress = []

    def ensure_loaded(self, name):
        cls = self.registry.new_unloaded(name)
        if cls.state != UNLOADED:
            return cls
        if name in self._in_progress:
            raise HierarchyCycle(" -> ".join(self._in_progress + [name]))
        data = self.classpath.find(name)
        if data is None:
            raise ClassNotFound(name)
        raw = cf.parse_class(data)
        if raw.name != name:
            raise NameMismatch("file declares %s, expected %s" % (raw.name, name))
        self._in_progress.append(name)
        try:
            if raw.super_name is not None:
                self.ensure_loaded(raw.super_name)
            load_parsed(cls, raw, data, self.registry.resolve)
        finally:
            self._in_progress.pop()
        return cls


def new_unloaded(registry, name):
    return registry.new_unloaded(name)


def load(cls, data, resolver):
    """Bring an unloaded class to state loaded from raw .class bytes.

    The superclass must already be loaded (a Loader arranges that); the
    resolver provides handles for every other referenced class, created in
    state unloaded when unseen.
    """
    if cls.state != UNLOADED:
        raise InvalidTransition("%s is %s, cannot load" % (cls.name, cls.state))
    raw = cf.parse_class(data)
    if raw.name != cls.name:
        raise NameMismatch("file declares %s, expected %s" % (raw.name, cls.name))
    load_parsed(cls, raw, data, resolver)


def load_parsed(cls, raw, data, resolver):
    pool = cp.build_pool(raw)
    cp.prelink_pass1(pool, raw, resolver)
    cp.prelink_pass2(pool, raw)

    if raw.super_name is not None:
        sup = resolver(raw.super_name)
        if sup.state == UNLOADED:
            raise ClassNotFound("superclass %s of %s is not loaded"
                                % (raw.super_name, cls.name))
        if any(k is cls for k in sup.hierarchy()):
            raise HierarchyCycle("%s <- %s" % (cls.name, raw.super_name))
        cls.super_cls = sup
        cls.a_base = sup.a_base + len(sup.a_static_zone)
        cls.v_base = sup.v_base + len(sup.v_static_zone)
        cls.instance_base = sup.instance_size
    cls.access_flags = raw.access_flags
    cls.interfaces = [resolver(raw.class_name(i)) for i in raw.interfaces]

    cls.pool = pool
    cls.fields = []
    instance_offset = cls.instance_base
    for fm in raw.fields:
        f = FieldRep(cls, fm.name, fm.descriptor, fm.access_flags,
                     fm.is_static, desc.type_code(fm.descriptor),
                     constant_value=cf.constant_value_of(raw, fm))
        if not f.is_static:
            f.offset = instance_offset
            instance_offset += f.width
        cls.fields.append(f)
    cls.instance_size = instance_offset
    lay_out_statics(cls)

    cls.methods = []
    for mm in raw.methods:
        m = MethodRep(cls, mm.name, mm.descriptor, mm.access_flags,
                      desc.arg_slots(mm.descriptor, include_receiver=not mm.is_static))
        code_attr = mm.attr("Code")
        if code_attr is not None:
            m.code = _method_code(code_attr.code, pool)
            rewrite_load(m.code, pool)
            m.code_loaded = m.code
        cls.methods.append(m)

    build_dispatch_table(cls)
    cls.raw_stats = {
        "entries": cf.pool_entry_count(raw),
        "pool_bytes": cf.raw_pool_byte_size(raw),
        "file_bytes": len(data) if data is not None else 0,
    }
    cls.state = LOADED
    cls.loaded_view = StageView(pool.clone(),
                                {m.key: m.code for m in cls.methods},
                                relinked=False)


def _method_code(raw_code, pool):
    table = []
    for start, end, handler, catch in raw_code.exception_table:
        if catch == 0:
            aidx = None
        else:
            placed = pool.origin.get(catch)
            if placed is None or placed[0] != cp.ATABLE \
                    or pool.atable[placed[1]].kind != cp.A_CLASS:
                raise BadPoolRef("catch type index %d is not a class constant" % catch)
            aidx = placed[1]
        table.append((start, end, handler, aidx))
    stack_maps = None
    for a in raw_code.attributes:
        if a.retained:
            stack_maps = a.payload
            break
    return MethodCode(bytearray(raw_code.code), raw_code.max_stack,
                      raw_code.max_locals, table, stack_maps)


def lay_out_statics(cls):
    """Assign zone slots to static fields, continuing the superclass layout.

    Reference statics take consecutive a-zone slots, primitives v-zone
    slots (two for long/double).  Offsets are hierarchy-wide so a 13-bit
    offset names a slot unambiguously along one superclass chain.
    """
    next_a = cls.a_base
    next_v = cls.v_base
    for f in cls.fields:
        if not f.is_static:
            continue
        if f.type_code == desc.TC_REF:
            f.zone = "a"
            f.offset = next_a
            next_a += 1
        else:
            f.zone = "v"
            f.offset = next_v
            next_v += f.width
        if f.offset > MAX_STATIC_OFFSET:
            raise StaticOverflow("static %s.%s needs offset %d"
                                 % (cls.name, f.name, f.offset))
    cls.a_static_zone = [None] * (next_a - cls.a_base)
    cls.v_static_zone = [0] * (next_v - cls.v_base)


def _check_u1(index, what):
    if index > 0xFF:
        raise PoolOverflow("%s index %d does not fit one byte" % (what, index))
    return index


def _check_u2(index, what):
    if index > 0xFFFF:
        raise PoolOverflow("%s index %d does not fit two bytes" % (what, index))
    return index


def rewrite_load(code, pool, origin=None):
    """Replace constant-loading instructions with quick forms, in place.

    Every replacement keeps the original byte length, so offsets and branch
    targets never move.  Referenced pool entries are marked.
    """
    origin = pool.origin if origin is None else origin
    bc = code.bytecode

    def placed(raw_idx, off):
        entry = origin.get(raw_idx)
        if entry is None:
            raise BadPoolRef("operand %d at offset %d is not a pool constant"
                             % (raw_idx, off))
        return entry

    for off, op, size in ops.walk(bc):
        if op == _OP["ldc"] or op == _OP["ldc_w"]:
            wide = op == _OP["ldc_w"]
            raw_idx = struct.unpack_from(">H", bc, off + 1)[0] if wide else bc[off + 1]
            space, idx = placed(raw_idx, off)
            kind = pool.vtable[idx].kind if space == cp.VTABLE else None
            if kind == cp.V_INT:
                new_op, target = "ldc_quick_i", (cp.VTABLE, idx)
            elif kind == cp.V_FLOAT:
                new_op, target = "ldc_quick_f", (cp.VTABLE, idx)
            elif kind == cp.V_STRING:
                lit = pool.vtable[idx].value
                new_op, target = "ldc_quick_a", (cp.ATABLE, lit)
                idx = lit
            else:
                raise BadPoolRef("ldc operand %d is not an int/float/string" % raw_idx)
            if wide:
                bc[off] = _OP[new_op + "_w"]
                struct.pack_into(">H", bc, off + 1, _check_u2(idx, new_op))
            else:
                bc[off] = _OP[new_op]
                bc[off + 1] = _check_u1(idx, new_op)
            cp.mark(pool, *target)
        elif op == _OP["ldc2_w"]:
            raw_idx = struct.unpack_from(">H", bc, off + 1)[0]
            space, idx = placed(raw_idx, off)
            kind = pool.vtable[idx].kind if space == cp.VTABLE else None
            if kind == cp.V_LONG_HI:
                bc[off] = _OP["ldc2_quick_l"]
            elif kind == cp.V_DBL_HI:
                bc[off] = _OP["ldc2_quick_d"]
            else:
                raise BadPoolRef("ldc2_w operand %d is not a long/double" % raw_idx)
            struct.pack_into(">H", bc, off + 1, _check_u2(idx, "ldc2_quick"))
            cp.mark(pool, cp.VTABLE, idx)
        elif op == _OP["anewarray"]:
            raw_idx = struct.unpack_from(">H", bc, off + 1)[0]
            space, idx = placed(raw_idx, off)
            if space != cp.ATABLE or pool.atable[idx].kind != cp.A_CLASS:
                raise BadPoolRef("anewarray operand %d is not a class constant" % raw_idx)
            bc[off] = _OP["anewarray_quick"]
            struct.pack_into(">H", bc, off + 1, _check_u2(idx, "anewarray_quick"))
            cp.mark(pool, cp.ATABLE, idx)
    return code


def build_dispatch_table(cls):
    """Superclass table as a prefix, overrides in place, new methods appended."""
    table = list(cls.super_cls.dispatch_table) if cls.super_cls else []
    for m in cls.methods:
        if not m.is_virtual:
            continue
        for i, existing in enumerate(table):
            if existing.name == m.name and existing.descriptor == m.descriptor:
                table[i] = m
                m.dispatch_slot = i
                break
        else:
            table.append(m)
            m.dispatch_slot = len(table) - 1
    cls.dispatch_table = table


def make_ready(cls, interp):
    """Initialize static fields; ready stays false if <clinit> is unsupported.

    ConstantValue attributes are written first, then <clinit> runs under
    the supplied interpreter callback: interp(cls, method) must execute
    against the live zones and raise UnsupportedClinit on any opcode or
    effect it cannot honor.
    """
    if cls.ready:
        return
    if cls.state not in (LOADED, LINKED):
        raise InvalidTransition("%s is %s, cannot become ready"
                                % (cls.name, cls.state))
    for f in cls.fields:
        if not f.is_static or f.constant_value is None:
            continue
        kind, value = f.constant_value
        owner, local = cls.static_slot(f.zone, f.offset)
        if kind == "s":
            owner.a_static_zone[local] = ("str", value)
        elif kind == "i":
            owner.v_static_zone[local] = value & 0xFFFFFFFF
        elif kind == "f":
            owner.v_static_zone[local] = value
        elif kind == "j":
            bits = value & 0xFFFFFFFFFFFFFFFF
            owner.v_static_zone[local] = bits >> 32
            owner.v_static_zone[local + 1] = bits & 0xFFFFFFFF
        elif kind == "d":
            owner.v_static_zone[local] = value >> 32
            owner.v_static_zone[local + 1] = value & 0xFFFFFFFF
    cls.zones_initial = (list(cls.a_static_zone), list(cls.v_static_zone))

    clinit = next((m for m in cls.methods
                   if m.name == "<clinit>" and m.code is not None), None)
    if clinit is not None:
        try:
            interp(cls, clinit)
        except UnsupportedClinit:
            cls.a_static_zone = list(cls.zones_initial[0])
            cls.v_static_zone = list(cls.zones_initial[1])
            raise
    cls.ready = True
