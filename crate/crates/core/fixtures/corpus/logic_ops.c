// args: 3 0 8
int f(int a, int b, int c) {
    int r = 0;
    if (a > 2 && (b == 0 || c < 5)) r += 1;
    if (!(a > 2) || b) r += 2;
    if (a && !b && c) r += 4;
    if ((a < b || b < c) && !(c == 8 && a == 4)) r += 8;
    return r;
}
