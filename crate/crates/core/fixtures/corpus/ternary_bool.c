// args: 4 9
int f(int a, int b) {
    int m = a > b ? a : b;
    int t = (a == b) + (a < b) * 2 + !a + (a != 0 && b >= 9);
    return m * 10 + t;
}
