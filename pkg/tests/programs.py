"""MiniIR programs shared by several test modules."""

RECURSIVE = """
func rec(int n) {
  local int x critical
  local int r
  local int m
entry:
  x = n * 10
  r = 0
  m = n - 1
  branch n > 0 down leaf
down:
  r = call rec(m) then back
back:
  r = r + x
  ret r
leaf:
  ret x
}

func main {
entry:
  attest_begin 1
  call rec(3) then done
done:
  attest_end 1
  halt
}
"""

POINTER = """
global array @buf[2] critical
global int @next = 0 critical
global int @out = 0

func main {
  local ptr p
  local int i
  local int v
entry:
  @next = 5
  p = &@buf
  i = input
  v = input
  attest_begin 1
  p[i] = v
  @out = @next
  v = @buf[0]
  attest_end 1
  halt
}
"""


LOOPED_CALLS = """
func leaf(int a) {
  local int b
entry:
  b = a + 1
  ret b
}

func main {
  local int i
  local int n
  local int x
entry:
  n = input
  i = 0
  x = 0
  attest_begin 1
  jump head
head:
  branch i < n body out
body:
  x = call leaf(x) then c2
c2:
  x = call leaf(x) then c3
c3:
  x = call leaf(x) then next
next:
  i = i + 1
  jump head
out:
  attest_end 1
  output x
  halt
}
"""
