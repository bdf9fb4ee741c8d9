// args: 37 5
int f(int a, int b) {
    int c = a * b - (a / b) + a % b;
    c = (c ^ (a & b)) | 3;
    return c - -a;
}
