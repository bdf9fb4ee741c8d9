// args: 3
union U { int a[2]; long l; };
union U u;
int f(int k) {
    u.l = 70000;
    u.a[1] = u.a[1] + k;
    return u.a[0] + u.a[1];
}
